#![allow(dead_code)]

pub mod conic_qp;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_xoshiro::SplitMix64;
use semicont::bnb::fixed_support_qp;
use semicont::generators::{generate, Dominance, GenSpec};
use semicont::linalg::{min_eigenvalue, SymMatrix};
use semicont::model::{is_feasible, Instance, SolverPoint};
use semicont::qp::{solve_qp, QpProblem, QpStatus};
use semicont::reformulate::{build_plain, LiftParams};

/// `count` instances alternating MV and SSP with `n` cycling through
/// `n_lo..=n_hi`.
pub fn mixed_instances(count: usize, n_lo: usize, n_hi: usize, seed: u64) -> Vec<Instance> {
    let dominance = [Dominance::Minus, Dominance::Zero, Dominance::Plus];
    (0..count)
        .map(|i| {
            let n = n_lo + (i / 2) % (n_hi - n_lo + 1);
            let k = 2 + (i / 2) % (n - 2);
            let s = seed + i as u64;
            let spec = if i % 2 == 0 {
                GenSpec::mv(n, k.max(3), dominance[(i / 2) % 3], s)
            } else {
                GenSpec::ssp(n, k, s)
            };
            generate(&spec).unwrap()
        })
        .collect()
}

/// Nearest point to a random target among those with support `y`, if any.
fn project_with_support(inst: &Instance, y: &[bool], rng: &mut SplitMix64) -> Option<SolverPoint> {
    let n = inst.n;
    let base = fixed_support_qp(inst, y);
    let target: Vec<f64> = (0..n).map(|i| if y[i] { rng.gen_range(inst.lb[i]..inst.ub[i]) } else { 0.0 }).collect();
    let mut qp = QpProblem::new(SymMatrix::identity(n).scaled(2.0), target.iter().map(|t| -2.0 * t).collect());
    qp.ineq_matrix = base.ineq_matrix;
    qp.ineq_rhs = base.ineq_rhs;
    qp.eq_matrix = base.eq_matrix;
    qp.eq_rhs = base.eq_rhs;
    qp.lower = base.lower;
    qp.upper = base.upper;
    let sol = solve_qp(&qp).ok()?;
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let p = SolverPoint { x: sol.z, y: y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() };
    is_feasible(inst, &p, true, 1e-7).ok()?.then_some(p)
}

/// A random point feasible for the mixed-binary problem.
pub fn binary_feasible_point(inst: &Instance, rng: &mut SplitMix64) -> SolverPoint {
    let n = inst.n;
    let k_max = inst.cardinality.unwrap_or(n).min(n);
    for _ in 0..1000 {
        let k = rng.gen_range(1..=k_max);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut y = vec![false; n];
        for &i in &idx[..k] {
            y[i] = true;
        }
        if let Some(p) = project_with_support(inst, &y, rng) {
            return p;
        }
    }
    panic!("no feasible support found for {:?}", inst.meta.name);
}

/// A random point of the continuous relaxation with every `y_i` in `[y_min, 1]`.
pub fn relaxed_point(inst: &Instance, y_min: f64, rng: &mut SplitMix64) -> Option<SolverPoint> {
    let m = build_plain(inst);
    let nv = m.num_vars();
    let mut lower = m.lower.clone();
    for &j in &m.y_indices() {
        lower[j] = y_min;
    }
    let mut qp = m.relaxation(&lower, &m.upper);
    let target: Vec<f64> = (0..nv)
        .map(|j| {
            let lo = lower[j];
            let hi = if m.upper[j].is_finite() { m.upper[j] } else { lo + 2.0 };
            rng.gen_range(lo..=hi)
        })
        .collect();
    qp.hessian = SymMatrix::identity(nv).scaled(2.0);
    qp.linear = target.iter().map(|t| -2.0 * t).collect();
    let sol = solve_qp(&qp).ok()?;
    (sol.status == QpStatus::Optimal).then(|| m.to_point(&sol.z))
}

/// Lift parameters of the form `u = -2 rho r`, `v = rho r^2` with
/// `Q - diag(rho)` PSD, so the lifted Hessian is PSD; some indices are
/// left at `(0, 0)`.
pub fn random_feasible_lift(inst: &Instance, rng: &mut SplitMix64) -> LiftParams {
    let lam = min_eigenvalue(&inst.q).unwrap().max(0.0);
    let mut lp = LiftParams::zeros(inst.n);
    for i in 0..inst.n {
        if rng.gen_bool(0.2) {
            continue;
        }
        let rho = lam * rng.gen::<f64>();
        let r = rng.gen_range(inst.lb[i]..=inst.ub[i]);
        lp.u[i] = -2.0 * rho * r;
        lp.v[i] = rho * r * r;
    }
    lp
}
