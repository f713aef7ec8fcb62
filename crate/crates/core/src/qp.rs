//! Dense convex QP solver (primal-dual interior point, Mehrotra
//! predictor-corrector).
//!
//! ```text
//!     min  1/2 z'Hz + f'z
//!     s.t. G z <= g
//!          E z  = e
//!          lower <= z <= upper        (infinite bounds allowed)
//! ```
//!
//! Fixed variables (`lower == upper`) are eliminated before the solve. When
//! the interior-point iteration stalls or diverges, a phase-one LP decides
//! between "infeasible" (with a Farkas certificate) and "iteration limit".

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Matrix, QuasiDefiniteLdl, SymMatrix};

/// Proximal diagonal shift added to the reduced KKT matrix.
pub const PROX_SHIFT: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: SymMatrix,
    pub linear: Vec<f64>,
    pub ineq_matrix: Matrix,
    pub ineq_rhs: Vec<f64>,
    pub eq_matrix: Matrix,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem with free variables.
    pub fn new(hessian: SymMatrix, linear: Vec<f64>) -> Self {
        let n = hessian.dim();
        QpProblem {
            hessian,
            linear,
            ineq_matrix: Matrix::zeros(0, n),
            ineq_rhs: Vec::new(),
            eq_matrix: Matrix::zeros(0, n),
            eq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.hessian.dim()
    }

    pub fn push_ineq(&mut self, row: &[f64], rhs: f64) {
        self.ineq_matrix.push_row(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn push_eq(&mut self, row: &[f64], rhs: f64) {
        self.eq_matrix.push_row(row);
        self.eq_rhs.push(rhs);
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        0.5 * self.hessian.quad_form(z) + dot(&self.linear, z)
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        let ok = self.linear.len() == n
            && self.ineq_matrix.cols() == n
            && self.ineq_matrix.rows() == self.ineq_rhs.len()
            && self.eq_matrix.cols() == n
            && self.eq_matrix.rows() == self.eq_rhs.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("inconsistent QP data".into()))
        }
    }

    /// Largest absolute residual of the constraints at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (k, r) in self.ineq_matrix.mul_vec(z).iter().enumerate() {
            v = v.max(r - self.ineq_rhs[k]);
        }
        for (k, r) in self.eq_matrix.mul_vec(z).iter().enumerate() {
            v = v.max((r - self.eq_rhs[k]).abs());
        }
        for i in 0..self.dim() {
            v = v.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone, Default)]
pub struct QpResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

/// Farkas-type ray: multipliers `(ineq >= 0, eq, lower >= 0, upper >= 0)`
/// with `G'ineq + E'eq - lower + upper = 0` and a negative combined
/// right-hand side, which proves the constraint set empty.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `||G'ineq + E'eq - lower + upper||_inf` after normalization.
    pub residual: f64,
    /// `g'ineq + e'eq - lower'lb + upper'ub`, strictly negative.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vec<f64>,
    pub obj: f64,
    pub ineq_duals: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub iterations: usize,
    pub prox_shift: f64,
    pub residuals: QpResiduals,
    pub farkas: Option<FarkasCertificate>,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings { max_iter: 200, tol: 1e-10 }
    }
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(p, &QpSettings::default())
}

pub fn solve_qp_with(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    p.check()?;
    let n = p.dim();
    for i in 0..n {
        if p.lower[i] > p.upper[i] {
            return Ok(infeasible_bounds(p, i));
        }
    }
    let reduced = Reduced::build(p);
    if let Some(row) = reduced.inconsistent_row {
        return Ok(infeasible_empty_row(p, &reduced, row));
    }
    let mut sol = if reduced.n == 0 {
        Ok(IpmOutcome::Converged(IpmState::empty(&reduced)))
    } else {
        ipm(&reduced, settings)
    }?;
    let outcome = match std::mem::replace(&mut sol, IpmOutcome::Stalled(None)) {
        IpmOutcome::Converged(s) => (QpStatus::Optimal, s, None),
        IpmOutcome::Stalled(state) => match phase_one(&reduced, settings)? {
            PhaseOne::Infeasible(cert) => {
                let st = state.unwrap_or_else(|| IpmState::empty(&reduced));
                (QpStatus::Infeasible, st, Some(cert))
            }
            PhaseOne::Feasible => {
                let st = state.unwrap_or_else(|| IpmState::empty(&reduced));
                (QpStatus::IterLimit, st, None)
            }
        },
    };
    Ok(reduced.expand(p, outcome.0, outcome.1, outcome.2))
}

fn infeasible_bounds(p: &QpProblem, i: usize) -> QpSolution {
    let n = p.dim();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    lower[i] = 1.0;
    upper[i] = 1.0;
    let cert = FarkasCertificate {
        ineq: vec![0.0; p.ineq_rhs.len()],
        eq: vec![0.0; p.eq_rhs.len()],
        lower,
        upper,
        residual: 0.0,
        value: p.upper[i] - p.lower[i],
    };
    failed_solution(p, QpStatus::Infeasible, Some(cert))
}

fn failed_solution(p: &QpProblem, status: QpStatus, farkas: Option<FarkasCertificate>) -> QpSolution {
    let n = p.dim();
    let z: Vec<f64> = (0..n).map(|i| clamp_finite(0.0, p.lower[i], p.upper[i])).collect();
    QpSolution {
        status,
        obj: p.objective(&z),
        z,
        ineq_duals: vec![0.0; p.ineq_rhs.len()],
        eq_duals: vec![0.0; p.eq_rhs.len()],
        lower_duals: vec![0.0; n],
        upper_duals: vec![0.0; n],
        iterations: 0,
        prox_shift: 0.0,
        residuals: QpResiduals::default(),
        farkas,
    }
}

fn infeasible_empty_row(p: &QpProblem, r: &Reduced, row: EmptyRow) -> QpSolution {
    // A row with no free variables left: the ray is the row itself plus the
    // bound multipliers of the fixed variables it touches.
    let n = p.dim();
    let (mut ineq, mut eq) = (vec![0.0; p.ineq_rhs.len()], vec![0.0; p.eq_rhs.len()]);
    let (coefs, sign) = match row {
        EmptyRow::Ineq(k) => {
            ineq[k] = 1.0;
            (p.ineq_matrix.row(k).to_vec(), 1.0)
        }
        EmptyRow::Eq(k, s) => {
            eq[k] = s;
            (p.eq_matrix.row(k).to_vec(), s)
        }
    };
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for &j in &r.fixed {
        let c = sign * coefs[j];
        if c > 0.0 {
            lower[j] = c;
        } else {
            upper[j] = -c;
        }
    }
    let value = dot(&p.ineq_rhs, &ineq) + dot(&p.eq_rhs, &eq)
        - lower.iter().zip(&p.lower).filter(|(m, _)| **m != 0.0).map(|(m, b)| m * b).sum::<f64>()
        + upper.iter().zip(&p.upper).filter(|(m, _)| **m != 0.0).map(|(m, b)| m * b).sum::<f64>();
    let cert = FarkasCertificate { ineq, eq, lower, upper, residual: 0.0, value };
    failed_solution(p, QpStatus::Infeasible, Some(cert))
}

fn clamp_finite(v: f64, lo: f64, hi: f64) -> f64 {
    let mut x = v;
    if lo.is_finite() && x < lo {
        x = lo;
    }
    if hi.is_finite() && x > hi {
        x = hi;
    }
    x
}

#[derive(Debug, Clone, Copy)]
enum EmptyRow {
    Ineq(usize),
    /// equality row index and the sign that makes the ray's value negative
    Eq(usize, f64),
}

/// Problem restricted to the free variables.
struct Reduced {
    n: usize,
    free: Vec<usize>,
    fixed: Vec<usize>,
    fixed_values: Vec<f64>,
    h: SymMatrix,
    f: Vec<f64>,
    g_mat: Matrix,
    g_rhs: Vec<f64>,
    g_rows: Vec<usize>,
    e_mat: Matrix,
    e_rhs: Vec<f64>,
    e_rows: Vec<usize>,
    /// (reduced index, bound)
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
    inconsistent_row: Option<EmptyRow>,
}

const FIXED_TOL: f64 = 1e-12;
/// Iterations without halving the worst scaled residual before giving up.
const STALL_ITERS: usize = 30;
/// Scaled KKT residual at which a stalled solve still counts as optimal.
const ACCEPT_TOL: f64 = 1e-8;
const EMPTY_ROW_TOL: f64 = 1e-9;

impl Reduced {
    fn build(p: &QpProblem) -> Self {
        let n_all = p.dim();
        let mut free = Vec::new();
        let mut fixed = Vec::new();
        let mut full_fixed = vec![0.0; n_all];
        for i in 0..n_all {
            if p.lower[i].is_finite() && p.upper[i] - p.lower[i] <= FIXED_TOL * (1.0 + p.lower[i].abs()) {
                fixed.push(i);
                full_fixed[i] = 0.5 * (p.lower[i] + p.upper[i]);
            } else {
                free.push(i);
            }
        }
        let n = free.len();
        let h = SymMatrix::from_lower_fn(n, |a, b| p.hessian.get(free[a], free[b]));
        let f: Vec<f64> = free
            .iter()
            .map(|&i| p.linear[i] + fixed.iter().map(|&j| p.hessian.get(i, j) * full_fixed[j]).sum::<f64>())
            .collect();
        let scale = |row: &[f64]| 1.0 + row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut inconsistent_row = None;
        let mut g_mat = Matrix::zeros(0, n);
        let (mut g_rhs, mut g_rows) = (Vec::new(), Vec::new());
        for k in 0..p.ineq_rhs.len() {
            let row = p.ineq_matrix.row(k);
            let reduced_row: Vec<f64> = free.iter().map(|&i| row[i]).collect();
            let rhs = p.ineq_rhs[k] - fixed.iter().map(|&j| row[j] * full_fixed[j]).sum::<f64>();
            if reduced_row.iter().all(|v| *v == 0.0) {
                if rhs < -EMPTY_ROW_TOL * scale(row).max(1.0 + p.ineq_rhs[k].abs()) && inconsistent_row.is_none() {
                    inconsistent_row = Some(EmptyRow::Ineq(k));
                }
                continue;
            }
            g_mat.push_row(&reduced_row);
            g_rhs.push(rhs);
            g_rows.push(k);
        }
        let mut e_mat = Matrix::zeros(0, n);
        let (mut e_rhs, mut e_rows) = (Vec::new(), Vec::new());
        for k in 0..p.eq_rhs.len() {
            let row = p.eq_matrix.row(k);
            let reduced_row: Vec<f64> = free.iter().map(|&i| row[i]).collect();
            let rhs = p.eq_rhs[k] - fixed.iter().map(|&j| row[j] * full_fixed[j]).sum::<f64>();
            if reduced_row.iter().all(|v| *v == 0.0) {
                if rhs.abs() > EMPTY_ROW_TOL * scale(row).max(1.0 + p.eq_rhs[k].abs()) && inconsistent_row.is_none() {
                    // ray sign s with s * rhs < 0
                    inconsistent_row = Some(EmptyRow::Eq(k, -rhs.signum()));
                }
                continue;
            }
            e_mat.push_row(&reduced_row);
            e_rhs.push(rhs);
            e_rows.push(k);
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (r, &i) in free.iter().enumerate() {
            if p.lower[i].is_finite() {
                lower.push((r, p.lower[i]));
            }
            if p.upper[i].is_finite() {
                upper.push((r, p.upper[i]));
            }
        }
        let fixed_values = fixed.iter().map(|&j| full_fixed[j]).collect();
        Reduced {
            n,
            free,
            fixed,
            fixed_values,
            h,
            f,
            g_mat,
            g_rhs,
            g_rows,
            e_mat,
            e_rhs,
            e_rows,
            lower,
            upper,
            inconsistent_row,
        }
    }

    fn n_ineq(&self) -> usize {
        self.g_rhs.len() + self.lower.len() + self.upper.len()
    }

    /// Stacked inequality right-hand side `[g; -lb; ub]`.
    fn c_rhs(&self) -> Vec<f64> {
        let mut d = self.g_rhs.clone();
        d.extend(self.lower.iter().map(|&(_, b)| -b));
        d.extend(self.upper.iter().map(|&(_, b)| b));
        d
    }

    fn c_tr_mul(&self, w: &[f64]) -> Vec<f64> {
        let p = self.g_rhs.len();
        let mut out = self.g_mat.tr_mul_vec(&w[..p]);
        for (k, &(i, _)) in self.lower.iter().enumerate() {
            out[i] -= w[p + k];
        }
        let off = p + self.lower.len();
        for (k, &(i, _)) in self.upper.iter().enumerate() {
            out[i] += w[off + k];
        }
        out
    }

    fn expand(
        &self,
        p: &QpProblem,
        status: QpStatus,
        st: IpmState,
        phase_one: Option<ReducedFarkas>,
    ) -> QpSolution {
        let n_all = p.dim();
        let mut z = vec![0.0; n_all];
        for (r, &i) in self.free.iter().enumerate() {
            z[i] = st.z[r];
        }
        for (t, &j) in self.fixed.iter().enumerate() {
            z[j] = self.fixed_values[t];
        }
        let mut ineq_duals = vec![0.0; p.ineq_rhs.len()];
        let mut eq_duals = vec![0.0; p.eq_rhs.len()];
        let mut lower_duals = vec![0.0; n_all];
        let mut upper_duals = vec![0.0; n_all];
        let pg = self.g_rhs.len();
        for (r, &k) in self.g_rows.iter().enumerate() {
            ineq_duals[k] = st.lam[r];
        }
        for (r, &k) in self.e_rows.iter().enumerate() {
            eq_duals[k] = st.y[r];
        }
        for (t, &(i, _)) in self.lower.iter().enumerate() {
            lower_duals[self.free[i]] = st.lam[pg + t];
        }
        let off = pg + self.lower.len();
        for (t, &(i, _)) in self.upper.iter().enumerate() {
            upper_duals[self.free[i]] = st.lam[off + t];
        }
        // fixed variables absorb the remaining stationarity residual
        let mut grad = p.hessian.mul_vec(&z);
        for (g, f) in grad.iter_mut().zip(&p.linear) {
            *g += f;
        }
        let gt = p.ineq_matrix.tr_mul_vec(&ineq_duals);
        let et = p.eq_matrix.tr_mul_vec(&eq_duals);
        for &j in &self.fixed {
            let r = grad[j] + gt[j] + et[j];
            if r >= 0.0 {
                lower_duals[j] = r;
            } else {
                upper_duals[j] = -r;
            }
        }
        let mut stationarity = grad.clone();
        for i in 0..n_all {
            stationarity[i] += gt[i] + et[i] - lower_duals[i] + upper_duals[i];
        }
        let compl = {
            let mut c: f64 = 0.0;
            for (k, v) in p.ineq_matrix.mul_vec(&z).iter().enumerate() {
                c = c.max((ineq_duals[k] * (p.ineq_rhs[k] - v)).abs());
            }
            for i in 0..n_all {
                if p.lower[i].is_finite() {
                    c = c.max((lower_duals[i] * (z[i] - p.lower[i])).abs());
                }
                if p.upper[i].is_finite() {
                    c = c.max((upper_duals[i] * (p.upper[i] - z[i])).abs());
                }
            }
            c
        };
        let farkas = phase_one.map(|cert| self.expand_farkas(p, cert));
        QpSolution {
            status,
            obj: p.objective(&z),
            residuals: QpResiduals {
                primal: p.max_violation(&z),
                dual: norm_inf(&stationarity),
                complementarity: compl,
            },
            z,
            ineq_duals,
            eq_duals,
            lower_duals,
            upper_duals,
            iterations: st.iterations,
            prox_shift: PROX_SHIFT,
            farkas,
        }
    }

    fn expand_farkas(&self, p: &QpProblem, cert: ReducedFarkas) -> FarkasCertificate {
        let n_all = p.dim();
        let mut ineq = vec![0.0; p.ineq_rhs.len()];
        let mut eq = vec![0.0; p.eq_rhs.len()];
        let mut lower = vec![0.0; n_all];
        let mut upper = vec![0.0; n_all];
        let pg = self.g_rhs.len();
        for (r, &k) in self.g_rows.iter().enumerate() {
            ineq[k] = cert.lam[r];
        }
        for (r, &k) in self.e_rows.iter().enumerate() {
            eq[k] = cert.y[r];
        }
        for (t, &(i, _)) in self.lower.iter().enumerate() {
            lower[self.free[i]] = cert.lam[pg + t];
        }
        let off = pg + self.lower.len();
        for (t, &(i, _)) in self.upper.iter().enumerate() {
            upper[self.free[i]] = cert.lam[off + t];
        }
        // fixed columns: split the column residual into bound multipliers
        let gt = p.ineq_matrix.tr_mul_vec(&ineq);
        let et = p.eq_matrix.tr_mul_vec(&eq);
        for &j in &self.fixed {
            let r = gt[j] + et[j];
            if r >= 0.0 {
                lower[j] = r;
            } else {
                upper[j] = -r;
            }
        }
        let mut col = vec![0.0; n_all];
        for i in 0..n_all {
            col[i] = gt[i] + et[i] - lower[i] + upper[i];
        }
        let mut value = dot(&p.ineq_rhs, &ineq) + dot(&p.eq_rhs, &eq);
        for i in 0..n_all {
            if lower[i] != 0.0 {
                value -= lower[i] * p.lower[i];
            }
            if upper[i] != 0.0 {
                value += upper[i] * p.upper[i];
            }
        }
        FarkasCertificate { ineq, eq, lower, upper, residual: norm_inf(&col), value }
    }
}

struct IpmState {
    z: Vec<f64>,
    y: Vec<f64>,
    lam: Vec<f64>,
    iterations: usize,
}

impl IpmState {
    fn empty(r: &Reduced) -> Self {
        IpmState {
            z: vec![0.0; r.n],
            y: vec![0.0; r.e_rhs.len()],
            lam: vec![0.0; r.n_ineq()],
            iterations: 0,
        }
    }
}

enum IpmOutcome {
    Converged(IpmState),
    Stalled(Option<IpmState>),
}

/// Augmented Newton system
///
/// ```text
///     [ H + D + prox   G'          E'   ] [dz]
///     [ G             -S/Lambda    0    ] [dl]
///     [ E              0          -reg  ] [dy]
/// ```
///
/// with `D` the diagonal bound weights. Keeping the general rows unreduced
/// avoids multiplying residual noise by `lambda / s`.
struct KktSystem {
    kkt: Vec<f64>,
    ldl: QuasiDefiniteLdl,
    dim: usize,
}

impl KktSystem {
    fn new(r: &Reduced, bound_w: &[f64], row_inv_w: &[f64]) -> Self {
        let n = r.n;
        let p = r.g_rhs.len();
        let q = r.e_rhs.len();
        let dim = n + p + q;
        let mut kkt = vec![0.0; dim * dim];
        for i in 0..n {
            kkt[i * dim..i * dim + n].copy_from_slice(r.h.row(i));
            kkt[i * dim + i] += bound_w[i];
        }
        for t in 0..p {
            let row = r.g_mat.row(t);
            for i in 0..n {
                kkt[(n + t) * dim + i] = row[i];
                kkt[i * dim + n + t] = row[i];
            }
            kkt[(n + t) * dim + n + t] = -row_inv_w[t];
        }
        for t in 0..q {
            let row = r.e_mat.row(t);
            for i in 0..n {
                kkt[(n + p + t) * dim + i] = row[i];
                kkt[i * dim + n + p + t] = row[i];
            }
        }
        // per-column, so barrier weights near active bounds do not damp
        // the other columns
        let scale = (0..n).fold(1.0f64, |a, i| a.max(kkt[i * dim + i].abs()));
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[i * dim + i] += PROX_SHIFT * kkt[i * dim + i].abs().max(1.0);
        }
        for t in n..dim {
            reg[t * dim + t] -= 1e-12;
        }
        let ldl = QuasiDefiniteLdl::factor(reg, dim, n, 1e-14 * scale);
        KktSystem { kkt, ldl, dim }
    }

    /// Solves the unregularized system with iterative refinement.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let mut x = rhs.to_vec();
        self.ldl.solve_in_place(&mut x);
        for _ in 0..3 {
            let mut res = rhs.to_vec();
            for i in 0..dim {
                res[i] -= dot(&self.kkt[i * dim..(i + 1) * dim], &x);
            }
            if norm_inf(&res) <= 1e-15 * (1.0 + norm_inf(rhs)) {
                break;
            }
            self.ldl.solve_in_place(&mut res);
            for i in 0..dim {
                x[i] += res[i];
            }
        }
        x
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a: f64 = 1.0;
    for (x, dx) in v.iter().zip(dv) {
        if *dx < 0.0 {
            a = a.min(-x / dx);
        }
    }
    a
}

/// Primal-dual state split by constraint kind. Bound slacks are never
/// stored: they are recomputed from `z` so their primal residual is zero.
#[derive(Clone)]
struct Iterate {
    z: Vec<f64>,
    y: Vec<f64>,
    /// general rows: slack and multiplier
    s: Vec<f64>,
    lg: Vec<f64>,
    ll: Vec<f64>,
    lu: Vec<f64>,
}

impl Iterate {
    fn stacked_lam(&self) -> Vec<f64> {
        let mut lam = self.lg.clone();
        lam.extend_from_slice(&self.ll);
        lam.extend_from_slice(&self.lu);
        lam
    }

    fn into_state(self, iterations: usize) -> IpmState {
        let lam = self.stacked_lam();
        IpmState { z: self.z, y: self.y, lam, iterations }
    }
}

fn ipm(r: &Reduced, settings: &QpSettings) -> Result<IpmOutcome> {
    let n = r.n;
    let p = r.g_rhs.len();
    let q = r.e_rhs.len();
    let nl = r.lower.len();
    let nu = r.upper.len();
    let m = p + nl + nu;

    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for &(i, b) in &r.lower {
        lo[i] = b;
    }
    for &(i, b) in &r.upper {
        hi[i] = b;
    }
    let mut z: Vec<f64> = (0..n)
        .map(|i| match (lo[i].is_finite(), hi[i].is_finite()) {
            (true, true) => 0.5 * (lo[i] + hi[i]),
            (true, false) => lo[i] + 1.0,
            (false, true) => hi[i] - 1.0,
            (false, false) => 0.0,
        })
        .collect();
    let gz = r.g_mat.mul_vec(&z);
    let s: Vec<f64> = (0..p).map(|k| (r.g_rhs[k] - gz[k]).max(1.0)).collect();
    let mut it = Iterate { z: std::mem::take(&mut z), y: vec![0.0; q], s, lg: vec![1.0; p], ll: vec![1.0; nl], lu: vec![1.0; nu] };

    let d_c = r.c_rhs();
    let data_scale = 1.0 + norm_inf(&r.f).max(r.h.max_abs()).max(norm_inf(&d_c)).max(norm_inf(&r.e_rhs));
    let mut small_steps = 0;
    let mut best_merit = f64::INFINITY;
    let mut since_best = 0;
    let mut acceptable: Option<(f64, Iterate)> = None;
    let stalled = |it: Iterate, acceptable: Option<(f64, Iterate)>, iter: usize| match acceptable {
        Some((_, a)) => IpmOutcome::Converged(a.into_state(iter)),
        None => IpmOutcome::Stalled(Some(it.into_state(iter))),
    };

    for iter in 0..settings.max_iter {
        let z = &it.z;
        let tl: Vec<f64> = r.lower.iter().map(|&(i, b)| z[i] - b).collect();
        let tu: Vec<f64> = r.upper.iter().map(|&(i, b)| b - z[i]).collect();
        let hz = r.h.mul_vec(z);
        let lam = it.stacked_lam();
        let ct_lam = r.c_tr_mul(&lam);
        let et_y = r.e_mat.tr_mul_vec(&it.y);
        let r_d: Vec<f64> = (0..n).map(|i| hz[i] + r.f[i] + et_y[i] + ct_lam[i]).collect();
        let ez = r.e_mat.mul_vec(z);
        let r_e: Vec<f64> = (0..q).map(|k| ez[k] - r.e_rhs[k]).collect();
        let gz = r.g_mat.mul_vec(z);
        let r_p: Vec<f64> = (0..p).map(|k| gz[k] + it.s[k] - r.g_rhs[k]).collect();
        let compl = dot(&it.s, &it.lg) + dot(&tl, &it.ll) + dot(&tu, &it.lu);
        let mu = if m > 0 { compl / m as f64 } else { 0.0 };

        let pobj = 0.5 * dot(z, &hz) + dot(&r.f, z);
        let dual_scale = 1.0 + norm_inf(&r.f).max(norm_inf(&hz)).max(norm_inf(&ct_lam)).max(norm_inf(&et_y));
        let primal_scale = 1.0 + norm_inf(&d_c).max(norm_inf(&gz)).max(norm_inf(&r.e_rhs));
        let converged = norm_inf(&r_d) <= settings.tol * dual_scale
            && norm_inf(&r_p).max(norm_inf(&r_e)) <= settings.tol * primal_scale
            && compl <= settings.tol * (1.0 + pobj.abs());
        if converged {
            return Ok(IpmOutcome::Converged(it.into_state(iter)));
        }
        let merit = (norm_inf(&r_d) / dual_scale)
            .max(norm_inf(&r_p).max(norm_inf(&r_e)) / primal_scale)
            .max(compl / (1.0 + pobj.abs()));
        if merit <= ACCEPT_TOL.max(settings.tol) && acceptable.as_ref().map_or(true, |(m, _)| merit < *m) {
            acceptable = Some((merit, it.clone()));
        }
        if merit < 0.5 * best_merit {
            best_merit = merit;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let dual_size = norm_inf(&lam).max(norm_inf(&it.y));
        if dual_size > 1e12 * data_scale || small_steps >= 5 || since_best >= STALL_ITERS || !dual_size.is_finite() {
            return Ok(stalled(it, acceptable, iter));
        }

        let mut bound_w = vec![0.0; n];
        for (k, &(i, _)) in r.lower.iter().enumerate() {
            bound_w[i] += it.ll[k] / tl[k];
        }
        for (k, &(i, _)) in r.upper.iter().enumerate() {
            bound_w[i] += it.lu[k] / tu[k];
        }
        let row_inv_w: Vec<f64> = (0..p).map(|k| it.s[k] / it.lg[k]).collect();
        let kkt = KktSystem::new(r, &bound_w, &row_inv_w);

        // complementarity targets rc_* are s.l - sigma mu (+ corrector)
        let solve_direction = |rc_g: &[f64], rc_l: &[f64], rc_u: &[f64]| {
            let mut rhs = vec![0.0; n + p + q];
            for i in 0..n {
                rhs[i] = -r_d[i];
            }
            for (k, &(i, _)) in r.lower.iter().enumerate() {
                rhs[i] -= rc_l[k] / tl[k];
            }
            for (k, &(i, _)) in r.upper.iter().enumerate() {
                rhs[i] += rc_u[k] / tu[k];
            }
            for k in 0..p {
                rhs[n + k] = -r_p[k] + rc_g[k] / it.lg[k];
            }
            for k in 0..q {
                rhs[n + p + k] = -r_e[k];
            }
            let sol = kkt.solve(&rhs);
            let dz = sol[..n].to_vec();
            let dlg = sol[n..n + p].to_vec();
            let dy = sol[n + p..].to_vec();
            let ds: Vec<f64> = (0..p).map(|k| -(rc_g[k] + it.s[k] * dlg[k]) / it.lg[k]).collect();
            let dtl: Vec<f64> = r.lower.iter().map(|&(i, _)| dz[i]).collect();
            let dtu: Vec<f64> = r.upper.iter().map(|&(i, _)| -dz[i]).collect();
            let dll: Vec<f64> = (0..nl).map(|k| (-rc_l[k] - it.ll[k] * dtl[k]) / tl[k]).collect();
            let dlu: Vec<f64> = (0..nu).map(|k| (-rc_u[k] - it.lu[k] * dtu[k]) / tu[k]).collect();
            (dz, dy, ds, dlg, dtl, dll, dtu, dlu)
        };
        let step = |ds: &[f64], dlg: &[f64], dtl: &[f64], dll: &[f64], dtu: &[f64], dlu: &[f64]| {
            max_step(&it.s, ds)
                .min(max_step(&it.lg, dlg))
                .min(max_step(&tl, dtl))
                .min(max_step(&it.ll, dll))
                .min(max_step(&tu, dtu))
                .min(max_step(&it.lu, dlu))
        };

        let rc_g: Vec<f64> = (0..p).map(|k| it.s[k] * it.lg[k]).collect();
        let rc_l: Vec<f64> = (0..nl).map(|k| tl[k] * it.ll[k]).collect();
        let rc_u: Vec<f64> = (0..nu).map(|k| tu[k] * it.lu[k]).collect();
        let (_, _, ds, dlg, dtl, dll, dtu, dlu) = solve_direction(&rc_g, &rc_l, &rc_u);
        let a_aff = step(&ds, &dlg, &dtl, &dll, &dtu, &dlu);
        let sigma = if m > 0 {
            let prod = |v: &[f64], dv: &[f64], l: &[f64], dl: &[f64]| {
                (0..v.len()).map(|k| (v[k] + a_aff * dv[k]) * (l[k] + a_aff * dl[k])).sum::<f64>()
            };
            let mu_aff = (prod(&it.s, &ds, &it.lg, &dlg) + prod(&tl, &dtl, &it.ll, &dll) + prod(&tu, &dtu, &it.lu, &dlu))
                / m as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let target = sigma * mu;
        let rc_g: Vec<f64> = (0..p).map(|k| rc_g[k] + ds[k] * dlg[k] - target).collect();
        let rc_l: Vec<f64> = (0..nl).map(|k| rc_l[k] + dtl[k] * dll[k] - target).collect();
        let rc_u: Vec<f64> = (0..nu).map(|k| rc_u[k] + dtu[k] * dlu[k] - target).collect();
        let (dz, dy, ds, dlg, dtl, dll, dtu, dlu) = solve_direction(&rc_g, &rc_l, &rc_u);
        let alpha = (0.99 * step(&ds, &dlg, &dtl, &dll, &dtu, &dlu)).min(1.0);
        if !dz.iter().chain(&dlg).all(|v| v.is_finite()) {
            return Ok(stalled(it, acceptable, iter));
        }
        if alpha < 1e-8 {
            small_steps += 1;
        } else {
            small_steps = 0;
        }
        for i in 0..n {
            it.z[i] += alpha * dz[i];
        }
        for k in 0..q {
            it.y[k] += alpha * dy[k];
        }
        for k in 0..p {
            it.s[k] = (it.s[k] + alpha * ds[k]).max(1e-300);
            it.lg[k] = (it.lg[k] + alpha * dlg[k]).max(1e-300);
        }
        for k in 0..nl {
            it.ll[k] = (it.ll[k] + alpha * dll[k]).max(1e-300);
        }
        for k in 0..nu {
            it.lu[k] = (it.lu[k] + alpha * dlu[k]).max(1e-300);
        }
        // keep z strictly inside its bounds despite rounding
        for &(i, b) in &r.lower {
            if it.z[i] <= b {
                it.z[i] = b + 1e-300f64.max(f64::EPSILON * b.abs());
            }
        }
        for &(i, b) in &r.upper {
            if it.z[i] >= b {
                it.z[i] = b - 1e-300f64.max(f64::EPSILON * b.abs());
            }
        }
    }
    Ok(stalled(it, acceptable, settings.max_iter))
}

struct ReducedFarkas {
    lam: Vec<f64>,
    y: Vec<f64>,
}

enum PhaseOne {
    Infeasible(ReducedFarkas),
    Feasible,
}

/// Minimizes the total constraint violation
/// `t + sum(p + q)` over `C z - t <= d`, `E z + p - q = e`, `t, p, q >= 0`.
fn phase_one(r: &Reduced, settings: &QpSettings) -> Result<PhaseOne> {
    let n = r.n;
    let qn = r.e_rhs.len();
    let dim = n + 1 + 2 * qn;
    let mut lp = QpProblem::new(SymMatrix::zeros(dim), vec![0.0; dim]);
    lp.linear[n] = 1.0;
    for k in 0..2 * qn {
        lp.linear[n + 1 + k] = 1.0;
        lp.lower[n + 1 + k] = 0.0;
    }
    lp.lower[n] = 0.0;
    let d_c = r.c_rhs();
    let m = r.n_ineq();
    for k in 0..m {
        let mut unit = vec![0.0; m];
        unit[k] = 1.0;
        let mut row = r.c_tr_mul(&unit);
        row.push(-1.0);
        row.extend(std::iter::repeat(0.0).take(2 * qn));
        lp.push_ineq(&row, d_c[k]);
    }
    for k in 0..qn {
        let mut row = r.e_mat.row(k).to_vec();
        row.push(0.0);
        for t in 0..2 * qn {
            row.push(if t == k {
                1.0
            } else if t == qn + k {
                -1.0
            } else {
                0.0
            });
        }
        lp.push_eq(&row, r.e_rhs[k]);
    }
    let inner = Reduced::build(&lp);
    let outcome = ipm(&inner, &QpSettings { max_iter: settings.max_iter.max(100), tol: 1e-10 })?;
    let st = match outcome {
        IpmOutcome::Converged(st) => st,
        // the phase-one problem is always feasible and bounded; treat a stall
        // as "cannot decide"
        IpmOutcome::Stalled(_) => return Ok(PhaseOne::Feasible),
    };
    let violation = st.z[n] + st.z[n + 1..].iter().sum::<f64>();
    let scale = 1.0 + norm_inf(&d_c).max(norm_inf(&r.e_rhs));
    if violation <= 1e-7 * scale {
        return Ok(PhaseOne::Feasible);
    }
    // the first m rows of the phase-one LP are the stacked inequalities
    let lam: Vec<f64> = st.lam[..m].to_vec();
    let y: Vec<f64> = st.y.clone();
    let norm = lam.iter().sum::<f64>() + y.iter().map(|v| v.abs()).sum::<f64>();
    let norm = if norm > 0.0 { norm } else { 1.0 };
    Ok(PhaseOne::Infeasible(ReducedFarkas {
        lam: lam.iter().map(|v| v / norm).collect(),
        y: y.iter().map(|v| v / norm).collect(),
    }))
}
