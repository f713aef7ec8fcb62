//! Branch-and-bound over the binary `y` of a [`MiqpModel`], with lazy
//! perspective-cut separation when the model carries perspective data, and
//! an exhaustive enumeration oracle for small instances.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{dot, min_eigenvalue, Matrix};
use crate::model::{Instance, SolverPoint, FEAS_TOL};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::reformulate::{
    build_pc, perspective_cut_row, separate_perspective_cut, Cut, MiqpModel, PerspectiveParams, CUT_TOL,
};

/// Largest `n` accepted by [`enumerate_oracle`].
pub const ORACLE_MAX_N: usize = 20;

/// Below this `y_i` no perspective cut is separated.
pub const CUT_Y_TOL: f64 = 1e-9;

/// Tangent points closer than this are the same cut.
const CUT_DEDUP_TOL: f64 = 1e-9;

/// Separation threshold at integral candidates, where cuts must be tight.
const CUT_TOL_INTEGRAL: f64 = 1e-10;

const ROOT_CUT_ROUNDS: usize = 50;
const NODE_CUT_ROUNDS: usize = 3;
const INTEGRAL_CUT_ROUNDS: usize = 50;

/// Relative slack under which a cut is inherited by the children.
const KEEP_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branching {
    #[default]
    MostFractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeOrder {
    #[default]
    BestBound,
}

#[derive(Debug, Clone)]
pub struct SolveSettings {
    pub rel_gap: f64,
    /// seconds
    pub time_limit: f64,
    pub node_limit: usize,
    pub branching: Branching,
    pub node_order: NodeOrder,
    pub threads: usize,
    /// Forces a single worker so node order and statistics repeat exactly.
    pub deterministic: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            rel_gap: 1e-4,
            time_limit: f64::INFINITY,
            node_limit: usize::MAX,
            branching: Branching::MostFractional,
            node_order: NodeOrder::BestBound,
            threads: 1,
            deterministic: true,
        }
    }
}

impl SolveSettings {
    fn check(&self) -> Result<()> {
        if !(self.rel_gap > 0.0) {
            return Err(Error::InvalidSpec(format!("rel_gap = {} must be positive", self.rel_gap)));
        }
        Ok(())
    }

    fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    GapReached,
    TimeLimit,
    NodeLimit,
    Infeasible,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapReached => "gap_reached",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::NodeLimit => "node_limit",
            SolveStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub nodes_explored: usize,
    pub cuts_added: usize,
    /// seconds
    pub wall_time: f64,
    pub final_gap: f64,
    pub status: SolveStatus,
    pub root_bound: f64,
    pub best_bound: f64,
}

/// Subproblem: indicators in `fixed_zero` are off, those in `fixed_one`
/// are on. Indices refer to the model's links.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub fixed_zero: Vec<usize>,
    pub fixed_one: Vec<usize>,
    pub parent_bound: f64,
    pub depth: usize,
    /// cuts separated while processing this node
    pub local_cuts: usize,
    seq: u64,
    /// pool cuts inherited from the parent
    active: Vec<usize>,
}

impl Node {
    fn root() -> Self {
        Node { fixed_zero: Vec::new(), fixed_one: Vec::new(), parent_bound: f64::NEG_INFINITY, depth: 0, local_cuts: 0, seq: 0, active: Vec::new() }
    }
}

impl Eq for Node {}

// min-heap on (parent_bound, seq)
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.parent_bound.total_cmp(&self.parent_bound).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Best binary-feasible point, absent when a limit stopped the search
    /// before one was found.
    pub point: Option<SolverPoint>,
    /// The incumbent in model variables.
    pub z: Option<Vec<f64>>,
    pub objective: Option<f64>,
    /// Every cut separated during the search.
    pub cuts: Vec<Cut>,
    pub stats: SolveStats,
}

/// Relative gap `(incumbent - bound) / (|incumbent| + 1e-10)`, floored at 0.
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if incumbent == f64::INFINITY {
        return f64::INFINITY;
    }
    ((incumbent - bound) / (incumbent.abs() + 1e-10)).max(0.0)
}

fn prune_tol(incumbent: f64) -> f64 {
    1e-9 * (1.0 + incumbent.abs())
}

fn is_integral(v: f64) -> bool {
    (v - v.round()).abs() <= FEAS_TOL
}

/// Global cut pool; `xbars[link]` maps tangent points to pool indices.
#[derive(Debug, Clone, Default)]
struct CutPool {
    cuts: Vec<Cut>,
    xbars: Vec<Vec<(f64, usize)>>,
}

impl CutPool {
    fn new(links: usize) -> Self {
        CutPool { cuts: Vec::new(), xbars: vec![Vec::new(); links] }
    }

    fn find(&self, link: usize, xbar: f64) -> Option<usize> {
        self.xbars[link].iter().find(|&&(t, _)| (t - xbar).abs() <= CUT_DEDUP_TOL).map(|&(_, k)| k)
    }

    /// Index of the cut, adding it when new.
    fn insert(&mut self, model: &MiqpModel, link: usize, xbar: f64) -> usize {
        if let Some(k) = self.find(link, xbar) {
            return k;
        }
        let k = self.cuts.len();
        self.xbars[link].push((xbar, k));
        self.cuts.push(perspective_cut_row(&model.links[link], xbar));
        k
    }
}

/// Fixed data shared by every node.
struct Context<'a> {
    model: &'a MiqpModel,
    /// relaxation without pool cuts
    base: QpProblem,
    /// exact objective for fixed `y`: perspective terms folded back into x
    fixed: QpProblem,
}

impl<'a> Context<'a> {
    fn new(model: &'a MiqpModel) -> Self {
        let base = model.relaxation(&model.lower, &model.upper);
        let fixed = match &model.perspective {
            None => base.clone(),
            Some(pd) => {
                let mut h = model.hessian.scaled(2.0);
                for (i, l) in model.links.iter().enumerate() {
                    h.set(l.x, l.x, h.get(l.x, l.x) + 2.0 * pd.rho[i]);
                }
                let mut qp = QpProblem::new(h, model.linear.clone());
                qp.ineq_matrix = model.ineq_matrix.clone();
                qp.ineq_rhs = model.ineq_rhs.clone();
                qp.eq_matrix = model.eq_matrix.clone();
                qp.eq_rhs = model.eq_rhs.clone();
                qp.lower = model.lower.clone();
                qp.upper = model.upper.clone();
                for l in &model.links {
                    if let Some(p) = l.phi {
                        qp.linear[p] = 0.0;
                        qp.lower[p] = 0.0;
                        qp.upper[p] = 0.0;
                    }
                }
                qp
            }
        };
        Context { model, base, fixed }
    }

    fn separating(&self) -> bool {
        self.model.perspective.is_some()
    }

    /// Bounds with the node's fixings; `y_i = 0` collapses `x_i` and `phi_i`.
    fn bounds(&self, zero: &[usize], one: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.model.lower.clone();
        let mut up = self.model.upper.clone();
        for &i in zero {
            let l = &self.model.links[i];
            for j in [Some(l.y), Some(l.x), l.phi].into_iter().flatten() {
                lo[j] = 0.0;
                up[j] = 0.0;
            }
        }
        for &i in one {
            lo[self.model.links[i].y] = 1.0;
        }
        (lo, up)
    }

    fn relaxation<'c>(&self, lo: &[f64], up: &[f64], cuts: impl Iterator<Item = &'c Cut>) -> QpProblem {
        let mut qp = self.base.clone();
        qp.lower = lo.to_vec();
        qp.upper = up.to_vec();
        let nv = qp.dim();
        for c in cuts {
            let mut row = vec![0.0; nv];
            for &(j, v) in &c.coefs {
                row[j] += v;
            }
            qp.push_ineq(&row, c.rhs);
        }
        qp
    }

    /// Exact optimum with every indicator fixed; `None` if infeasible.
    fn solve_fixed(&self, y: &[bool]) -> Option<(f64, Vec<f64>)> {
        if self.model.cardinality.is_some_and(|k| y.iter().filter(|&&b| b).count() > k) {
            return None;
        }
        let zero: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
        let one: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
        let (lo, up) = self.bounds(&zero, &one);
        let mut qp = self.fixed.clone();
        for &i in &one {
            let j = self.model.links[i].y;
            qp.lower[j] = 1.0;
            qp.upper[j] = 1.0;
        }
        for j in 0..qp.dim() {
            if self.model.perspective.is_none() || !self.is_phi(j) {
                qp.lower[j] = qp.lower[j].max(lo[j]);
                qp.upper[j] = qp.upper[j].min(up[j]);
            }
        }
        let sol = solve_qp(&qp).ok()?;
        if sol.status != QpStatus::Optimal {
            return None;
        }
        let mut z = sol.z;
        for l in &self.model.links {
            if let Some(p) = l.phi {
                z[p] = if z[l.y] > 0.5 { z[l.x] * z[l.x] } else { 0.0 };
            }
        }
        Some((self.model.objective(&z), z))
    }

    fn is_phi(&self, j: usize) -> bool {
        self.model.links.iter().any(|l| l.phi == Some(j))
    }

    /// Violated cuts at `z`, one per link at most.
    fn separate(&self, z: &[f64], ctol: f64) -> Vec<(usize, f64)> {
        let Some(pd) = &self.model.perspective else { return Vec::new() };
        let mut out = Vec::new();
        for (i, l) in self.model.links.iter().enumerate() {
            let Some(p) = l.phi else { continue };
            if pd.rho[i] <= 0.0 {
                continue;
            }
            if let Some(c) =
                separate_perspective_cut(pd.rho[i], z[l.x], z[l.y], z[p], pd.lb[i], pd.ub[i], ctol, CUT_Y_TOL)
            {
                out.push((i, c.xbar));
            }
        }
        out
    }

    fn phi_of(&self, c: &Cut) -> usize {
        c.coefs.iter().find(|&&(_, v)| v == -1.0).map_or(c.coefs[0].0, |&(j, _)| j)
    }

    /// Whether a cut is nearly binding at `z`, and so worth handing down.
    fn binding(&self, c: &Cut, z: &[f64]) -> bool {
        -c.violation(z) <= KEEP_SLACK * (1.0 + z[self.phi_of(c)].abs())
    }
}

enum Relaxed {
    Infeasible,
    /// Relaxation value, point, and whether the solve was reliable.
    Solved { bound: f64, z: Vec<f64>, exact: bool },
}

/// What a worker reports back after processing one node.
struct NodeResult {
    bound: f64,
    candidates: Vec<(f64, Vec<f64>)>,
    /// new tangent points, and whether the children inherit each
    new_cuts: Vec<(usize, f64, bool)>,
    /// pool cuts the children inherit
    inherit: Vec<usize>,
    children: Vec<Node>,
    tried: Vec<Vec<bool>>,
}

struct Shared {
    heap: BinaryHeap<Node>,
    incumbent: Option<(f64, Vec<f64>)>,
    pool: CutPool,
    tried: HashSet<Vec<bool>>,
    /// bounds of nodes being processed, keyed by sequence number
    in_flight: Vec<(u64, f64)>,
    next_seq: u64,
    nodes: usize,
    root_bound: f64,
    stop: Option<SolveStatus>,
    error: Option<Error>,
}

impl Shared {
    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |c| c.0)
    }

    fn lower_bound(&self) -> f64 {
        let heap = self.heap.peek().map_or(f64::INFINITY, |n| n.parent_bound);
        self.in_flight.iter().fold(heap, |m, &(_, b)| m.min(b))
    }

    fn offer(&mut self, value: f64, z: Vec<f64>) {
        if value < self.incumbent_value() {
            self.incumbent = Some((value, z));
        }
    }
}

/// Branch-and-bound on `model`. Perspective cuts are separated lazily when
/// the model carries perspective data.
pub fn solve_miqp(model: &MiqpModel, settings: &SolveSettings) -> Result<SolveOutcome> {
    settings.check()?;
    let start = Instant::now();
    let ctx = Context::new(model);
    let shared = Mutex::new(Shared {
        heap: BinaryHeap::from(vec![Node::root()]),
        incumbent: None,
        pool: CutPool::new(model.links.len()),
        tried: HashSet::new(),
        in_flight: Vec::new(),
        next_seq: 1,
        nodes: 0,
        root_bound: f64::NEG_INFINITY,
        stop: None,
        error: None,
    });
    let wake = Condvar::new();
    let workers = settings.workers();
    if workers == 1 {
        worker(&ctx, settings, &shared, &wake, start);
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| worker(&ctx, settings, &shared, &wake, start));
            }
        });
    }
    let sh = shared.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some(e) = sh.error {
        return Err(e);
    }
    let inc = sh.incumbent_value();
    let lb = sh.lower_bound().min(inc);
    let status = match sh.stop {
        Some(s) => s,
        None if sh.incumbent.is_none() => return Err(Error::Infeasible),
        None => SolveStatus::Optimal,
    };
    let final_gap = if status == SolveStatus::Optimal { 0.0 } else { relative_gap(inc, lb) };
    let stats = SolveStats {
        nodes_explored: sh.nodes,
        cuts_added: sh.pool.cuts.len(),
        wall_time: start.elapsed().as_secs_f64(),
        final_gap,
        status,
        root_bound: sh.root_bound,
        best_bound: if status == SolveStatus::Optimal { inc } else { lb },
    };
    let (objective, z) = match sh.incumbent {
        Some((v, z)) => (Some(v), Some(z)),
        None => (None, None),
    };
    Ok(SolveOutcome { point: z.as_ref().map(|z| model.to_point(z)), z, objective, cuts: sh.pool.cuts, stats })
}

/// Branch-and-cut on the perspective-cut model of `inst`.
pub fn solve_pc(inst: &Instance, rho: &PerspectiveParams, settings: &SolveSettings) -> Result<SolveOutcome> {
    if !rho.is_feasible_for(&inst.q)? {
        let lam = min_eigenvalue(&inst.q.minus_diag(&rho.rho))?;
        return Err(Error::ConvexityViolation { min_eigenvalue: lam });
    }
    let mut out = solve_miqp(&build_pc(inst, rho), settings)?;
    let seeded = build_pc(inst, rho).cuts;
    let mut all = seeded;
    all.append(&mut out.cuts);
    out.cuts = all;
    Ok(out)
}

fn worker(ctx: &Context, settings: &SolveSettings, shared: &Mutex<Shared>, wake: &Condvar, start: Instant) {
    loop {
        let (node, pool, incumbent) = {
            let mut sh = shared.lock().unwrap();
            let node = loop {
                if sh.stop.is_some() || sh.error.is_some() {
                    return;
                }
                let inc = sh.incumbent_value();
                if let Some(top) = sh.heap.peek() {
                    let lb = sh.in_flight.iter().fold(top.parent_bound, |m, &(_, b)| m.min(b));
                    if top.parent_bound >= inc - prune_tol(inc) {
                        sh.heap.pop();
                        continue;
                    }
                    if sh.incumbent.is_some() && relative_gap(inc, lb) <= settings.rel_gap {
                        sh.stop = Some(SolveStatus::GapReached);
                        wake.notify_all();
                        return;
                    }
                    if start.elapsed().as_secs_f64() >= settings.time_limit {
                        sh.stop = Some(SolveStatus::TimeLimit);
                        wake.notify_all();
                        return;
                    }
                    if sh.nodes >= settings.node_limit {
                        sh.stop = Some(SolveStatus::NodeLimit);
                        wake.notify_all();
                        return;
                    }
                    break sh.heap.pop().unwrap();
                }
                if sh.in_flight.is_empty() {
                    wake.notify_all();
                    return;
                }
                sh = wake.wait(sh).unwrap();
            };
            sh.nodes += 1;
            sh.in_flight.push((node.seq, node.parent_bound));
            (node, sh.pool.clone(), sh.incumbent_value())
        };
        let result = process(ctx, &node, &pool, incumbent, |y| shared.lock().unwrap().tried.contains(y));
        let mut sh = shared.lock().unwrap();
        sh.in_flight.retain(|&(s, _)| s != node.seq);
        match result {
            Err(e) => {
                sh.error.get_or_insert(e);
            }
            Ok(r) => {
                if node.depth == 0 {
                    sh.root_bound = r.bound;
                }
                let mut inherited = Vec::new();
                for (i, xbar, keep) in r.new_cuts {
                    let k = sh.pool.insert(ctx.model, i, xbar);
                    if keep {
                        inherited.push(k);
                    }
                }
                for y in r.tried {
                    sh.tried.insert(y);
                }
                for (v, z) in r.candidates {
                    sh.offer(v, z);
                }
                for mut child in r.children {
                    for &k in &inherited {
                        if !child.active.contains(&k) {
                            child.active.push(k);
                        }
                    }
                    child.seq = sh.next_seq;
                    sh.next_seq += 1;
                    sh.heap.push(child);
                }
            }
        }
        wake.notify_all();
    }
}

fn relax<'c>(ctx: &Context, lo: &[f64], up: &[f64], cuts: impl Iterator<Item = &'c Cut>) -> Result<Relaxed> {
    let sol = solve_qp(&ctx.relaxation(lo, up, cuts))?;
    Ok(match sol.status {
        QpStatus::Infeasible => Relaxed::Infeasible,
        QpStatus::Optimal => Relaxed::Solved { bound: sol.obj + ctx.model.constant, z: sol.z, exact: true },
        QpStatus::IterLimit => Relaxed::Solved { bound: f64::NEG_INFINITY, z: sol.z, exact: false },
    })
}

fn process(
    ctx: &Context,
    node: &Node,
    pool: &CutPool,
    incumbent: f64,
    seen: impl Fn(&[bool]) -> bool,
) -> Result<NodeResult> {
    let model = ctx.model;
    let links = &model.links;
    let mut out = NodeResult { bound: node.parent_bound, candidates: Vec::new(), new_cuts: Vec::new(), inherit: Vec::new(), children: Vec::new(), tried: Vec::new() };
    if model.cardinality.is_some_and(|k| node.fixed_one.len() > k) {
        return Ok(out);
    }
    let (lo, up) = ctx.bounds(&node.fixed_zero, &node.fixed_one);
    let mut active = node.active.clone();
    let mut fresh: Vec<(usize, f64, Cut)> = Vec::new();
    let rounds = if node.depth == 0 { ROOT_CUT_ROUNDS } else { NODE_CUT_ROUNDS };
    let mut round = 0;
    let mut last: Option<(f64, Vec<f64>)> = None;
    let (bound, z, exact, tight) = loop {
        let rows = active.iter().map(|&k| &pool.cuts[k]).chain(fresh.iter().map(|f| &f.2));
        let (bound, z, exact) = match relax(ctx, &lo, &up, rows)? {
            Relaxed::Infeasible => {
                if node.depth == 0 {
                    return Err(Error::Infeasible);
                }
                return Ok(out);
            }
            Relaxed::Solved { exact: false, .. } if last.is_some() => {
                // a later cut round failed; the previous round still bounds
                let (bound, z) = last.take().unwrap();
                break (bound, z, true, false);
            }
            Relaxed::Solved { bound, z, exact } => (bound, z, exact),
        };
        if exact {
            last = Some((bound, z.clone()));
        }
        let integral = links.iter().all(|l| is_integral(z[l.y]));
        if !ctx.separating() || !exact {
            break (bound, z, exact, true);
        }
        let (ctol, cap) = if integral { (CUT_TOL_INTEGRAL, INTEGRAL_CUT_ROUNDS) } else { (CUT_TOL, rounds) };
        let mut added = false;
        let mut pending = false;
        // pool cuts first, then fresh tangents
        for k in 0..pool.cuts.len() {
            if !active.contains(&k) && pool.cuts[k].violation(&z) > ctol {
                if round < cap {
                    active.push(k);
                    added = true;
                }
                pending = true;
            }
        }
        if !added {
            for (i, xbar) in ctx.separate(&z, ctol) {
                pending = true;
                if round >= cap {
                    break;
                }
                match pool.find(i, xbar) {
                    Some(k) if !active.contains(&k) => active.push(k),
                    Some(_) => continue,
                    None if fresh.iter().any(|f| f.0 == i && (f.1 - xbar).abs() <= CUT_DEDUP_TOL) => continue,
                    None => fresh.push((i, xbar, perspective_cut_row(&links[i], xbar))),
                }
                added = true;
            }
        }
        if !added || bound.max(node.parent_bound) >= incumbent - prune_tol(incumbent) {
            break (bound, z, exact, !pending);
        }
        round += 1;
    };
    for (i, xbar, cut) in fresh {
        out.new_cuts.push((i, xbar, ctx.binding(&cut, &z)));
    }
    out.inherit = active.into_iter().filter(|&k| ctx.binding(&pool.cuts[k], &z)).collect();
    out.bound = bound.max(node.parent_bound);
    if out.bound >= incumbent - prune_tol(incumbent) {
        return Ok(out);
    }

    let y: Vec<f64> = links.iter().map(|l| z[l.y]).collect();
    let free: Vec<usize> =
        (0..links.len()).filter(|i| !node.fixed_zero.contains(i) && !node.fixed_one.contains(i)).collect();
    let integral = y.iter().all(|&v| is_integral(v));

    let try_pattern = |pattern: Vec<bool>, out: &mut NodeResult| -> Option<f64> {
        if seen(&pattern) || out.tried.contains(&pattern) {
            return None;
        }
        let res = ctx.solve_fixed(&pattern);
        out.tried.push(pattern);
        let (v, zf) = res?;
        out.candidates.push((v, zf));
        Some(v)
    };

    if integral {
        let pattern: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
        let polished = try_pattern(pattern, &mut out);
        // the relaxation is exact here, so the node is solved
        let closed = polished.map_or(true, |v| v <= out.bound + prune_tol(v));
        if exact && tight && closed {
            return Ok(out);
        }
        if free.is_empty() {
            return Ok(out);
        }
        branch(node, out.bound, free[0], &mut out);
        return Ok(out);
    }

    try_pattern(rounded(&y, model.cardinality), &mut out);

    let pick = free
        .iter()
        .copied()
        .filter(|&i| !is_integral(y[i]))
        .min_by(|&a, &b| (y[a] - 0.5).abs().total_cmp(&(y[b] - 0.5).abs()).then(a.cmp(&b)))
        .or_else(|| free.first().copied());
    if let Some(i) = pick {
        branch(node, out.bound, i, &mut out);
    }
    Ok(out)
}

fn branch(node: &Node, bound: f64, i: usize, out: &mut NodeResult) {
    let mut zero = node.clone();
    zero.fixed_zero.push(i);
    let mut one = node.clone();
    one.fixed_one.push(i);
    for child in [&mut zero, &mut one] {
        child.parent_bound = bound;
        child.depth = node.depth + 1;
        child.local_cuts = out.new_cuts.len();
        child.active = out.inherit.clone();
    }
    out.children.push(zero);
    out.children.push(one);
}

/// Rounds at 0.5 and keeps the `k` largest entries.
fn rounded(y: &[f64], k: Option<usize>) -> Vec<bool> {
    let mut on: Vec<usize> = (0..y.len()).filter(|&i| y[i] >= 0.5).collect();
    if let Some(k) = k {
        if on.len() > k {
            on.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
            on.truncate(k);
        }
    }
    let mut p = vec![false; y.len()];
    for i in on {
        p[i] = true;
    }
    p
}

/// Continuous QP in `x` for a fixed binary `y`.
pub fn fixed_support_qp(inst: &Instance, y: &[bool]) -> QpProblem {
    let n = inst.n;
    let yf: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut qp = QpProblem::new(inst.q.scaled(2.0), inst.c.clone());
    let rows = inst.inequality_rows(false);
    let mut a = Matrix::zeros(0, n);
    let mut rhs = Vec::new();
    for k in 0..rows.len() {
        a.push_row(rows.a.row(k));
        rhs.push(rows.rhs[k] - dot(rows.b.row(k), &yf));
    }
    qp.ineq_matrix = a;
    qp.ineq_rhs = rhs;
    let eq = inst.equality_rows();
    for k in 0..eq.len() {
        qp.push_eq(eq.a.row(k), eq.rhs[k] - dot(eq.b.row(k), &yf));
    }
    for i in 0..n {
        qp.lower[i] = inst.lb[i] * yf[i];
        qp.upper[i] = inst.ub[i] * yf[i];
    }
    qp
}

/// Exact optimum by enumerating every `y` within the cardinality limit, in
/// lexicographic order; the first of tied optima wins.
pub fn enumerate_oracle(inst: &Instance) -> Result<(SolverPoint, f64)> {
    let n = inst.n;
    if n > ORACLE_MAX_N {
        return Err(Error::TooLarge { n, limit: ORACLE_MAX_N });
    }
    let k = inst.cardinality.unwrap_or(n);
    let hy = |y: &[bool]| -> f64 { (0..n).filter(|&i| y[i]).map(|i| inst.h[i]).sum() };
    let mut best: Option<(SolverPoint, f64)> = None;
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        // y_0 is the most significant bit, so masks ascend lexicographically
        let y: Vec<bool> = (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect();
        let sol = solve_qp(&fixed_support_qp(inst, &y))?;
        if sol.status != QpStatus::Optimal {
            continue;
        }
        let f = sol.obj + hy(&y);
        let better = best.as_ref().map_or(true, |(_, b)| f < b - 1e-12 * (1.0 + b.abs()));
        if better {
            let point = SolverPoint { x: sol.z, y: y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() };
            best = Some((point, f));
        }
    }
    best.ok_or(Error::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{gen_mv, Dominance, GenSpec};
    use crate::model::objective;
    use crate::reformulate::build_plain;

    #[test]
    fn univariate_example_plain() {
        let inst = Instance::univariate_example();
        let out = solve_miqp(&build_plain(&inst), &SolveSettings::default()).unwrap();
        assert!((out.objective.unwrap() + 4.0).abs() < 1e-8);
        let p = out.point.unwrap();
        assert!((p.x[0] - 2.0).abs() < 1e-6 && (p.y[0] - 1.0).abs() < 1e-9);
        assert_eq!(out.stats.status, SolveStatus::Optimal);
        let (op, ov) = enumerate_oracle(&inst).unwrap();
        assert!((ov + 4.0).abs() < 1e-8);
        assert_eq!(op.y, vec![1.0]);
    }

    #[test]
    fn switching_everything_off() {
        let mut inst = Instance::univariate_example();
        inst.h = vec![1e6];
        let out = solve_miqp(&build_plain(&inst), &SolveSettings::default()).unwrap();
        assert!(out.objective.unwrap().abs() < 1e-8);
        assert_eq!(out.point.unwrap().y, vec![0.0]);
    }

    #[test]
    fn oracle_rejects_large_and_infeasible() {
        let big = gen_mv(&GenSpec::mv(21, 3, Dominance::Zero, 1)).unwrap();
        assert!(matches!(enumerate_oracle(&big), Err(Error::TooLarge { n: 21, limit: 20 })));
        let mut inst = Instance::univariate_example();
        // x >= 5 is incompatible with x <= 3 y and y <= 1
        inst.push_row(&[-1.0], &[0.0], -5.0);
        assert!(matches!(enumerate_oracle(&inst), Err(Error::Infeasible)));
        assert!(matches!(solve_miqp(&build_plain(&inst), &SolveSettings::default()), Err(Error::Infeasible)));
    }

    #[test]
    fn mv_seed_42_matches_oracle() {
        let inst = gen_mv(&GenSpec::mv(10, 3, Dominance::Zero, 42)).unwrap();
        let (_, opt) = enumerate_oracle(&inst).unwrap();
        let out = solve_miqp(&build_plain(&inst), &SolveSettings::default()).unwrap();
        let v = out.objective.unwrap();
        assert!((v - opt).abs() <= 1e-6 * opt.abs().max(1e-12), "{v} vs {opt}");
        let p = out.point.unwrap();
        assert!((objective(&inst, &p).unwrap() - v).abs() <= 1e-8);
    }

    #[test]
    fn rounding_respects_cardinality() {
        assert_eq!(rounded(&[0.9, 0.6, 0.7, 0.1], Some(2)), vec![true, false, true, false]);
        assert_eq!(rounded(&[0.5, 0.4], None), vec![true, false]);
    }

    #[test]
    fn heap_pops_best_bound_then_fifo() {
        let mut h = BinaryHeap::new();
        for (seq, b) in [(1, 2.0), (2, 1.0), (3, 1.0)] {
            let mut n = Node::root();
            n.seq = seq;
            n.parent_bound = b;
            h.push(n);
        }
        let order: Vec<u64> = std::iter::from_fn(|| h.pop().map(|n| n.seq)).collect();
        assert_eq!(order, vec![2, 3, 1]);
    }

    #[test]
    fn children_never_bound_below_their_parent() {
        use crate::reformulate::{build_pc, rho_uniform_mineig};
        for seed in 0..3 {
            let inst = gen_mv(&GenSpec::mv(8, 3, Dominance::Plus, seed)).unwrap();
            let rho = rho_uniform_mineig(&inst).unwrap();
            for model in [build_plain(&inst), build_pc(&inst, &rho)] {
                let ctx = Context::new(&model);
                let mut pool = CutPool::new(model.links.len());
                let root = process(&ctx, &Node::root(), &pool, f64::INFINITY, |_| false).unwrap();
                for &(i, xbar, _) in &root.new_cuts {
                    pool.insert(&model, i, xbar);
                }
                let (lo, up) = ctx.bounds(&[], &[]);
                let Relaxed::Solved { bound: parent, .. } = relax(&ctx, &lo, &up, pool.cuts.iter()).unwrap() else {
                    panic!("root relaxation infeasible")
                };
                assert!(parent >= root.bound - 1e-8);
                for child in &root.children {
                    assert!(child.parent_bound >= root.bound);
                    let (lo, up) = ctx.bounds(&child.fixed_zero, &child.fixed_one);
                    if let Relaxed::Solved { bound, exact: true, .. } = relax(&ctx, &lo, &up, pool.cuts.iter()).unwrap() {
                        assert!(bound >= parent - 1e-8, "child {bound} < parent {parent}");
                    }
                }
            }
        }
    }

    #[test]
    fn gap_is_relative_to_incumbent() {
        assert_eq!(relative_gap(1.0, 1.0), 0.0);
        assert!((relative_gap(2.0, 1.0) - 0.5).abs() < 1e-9);
        assert_eq!(relative_gap(f64::INFINITY, 0.0), f64::INFINITY);
    }
}
