//! Reformulations of the semi-continuous QP and the machinery that picks
//! their parameters.
//!
//! * perspective: `x'(Q - diag rho)x + sum rho_i x_i^2 / y_i`, relaxed as an
//!   SOCP or outer-approximated by perspective cuts;
//! * lift-and-convexify (LCR): add `sum u_i x_i y_i + v_i y_i^2 - u_i x_i - v_i y_i`,
//!   which vanishes whenever `y` is binary and `x_i = 0` off the support;
//! * QCR on top of LCR: add weighted squared residuals of the equality rows
//!   and of the slacked inequality rows.
//!
//! The best `rho` comes from one SDP; the best `(u, v)` is then read off an
//! optimal solution of the perspective SOCP relaxation, which avoids the
//! larger `(u, v)` SDP altogether.

use std::time::Instant;

use crate::conic::{
    extract, solve_conic, AffineExpr, ConicBuilder, ConicProblem, ConicSettings, ConicSolution, ConicStatus,
    VariableLayout,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, min_eigenvalue, Matrix, SymMatrix, PSD_TOL};
use crate::model::{Instance, SolverPoint};
use crate::qp::{solve_qp, QpProblem, QpStatus};

/// Default threshold below which a relaxation `y*_i` counts as zero.
pub const Y_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveParams {
    pub rho: Vec<f64>,
}

impl PerspectiveParams {
    pub fn zeros(n: usize) -> Self {
        PerspectiveParams { rho: vec![0.0; n] }
    }

    /// `rho >= -1e-8` and `Q - diag(rho)` numerically PSD.
    pub fn is_feasible_for(&self, q: &SymMatrix) -> Result<bool> {
        if self.rho.len() != q.dim() {
            return Err(Error::DimensionMismatch("rho length differs from Q".into()));
        }
        if self.rho.iter().any(|&r| !(r >= -1e-8)) {
            return Ok(false);
        }
        let lam = min_eigenvalue(&q.minus_diag(&self.rho))?;
        Ok(lam >= -PSD_TOL * (1.0 + q.norm_inf()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftParams {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LiftParams {
    pub fn zeros(n: usize) -> Self {
        LiftParams { u: vec![0.0; n], v: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcrParams {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// one weight per equality row
    pub w: Vec<f64>,
    /// one weight per inequality row (instance rows, then the cardinality row)
    pub t: Vec<f64>,
}

/// Lifted Hessian `[[Q, diag(u)/2], [diag(u)/2, diag(v)]]`.
pub fn lifted_hessian(q: &SymMatrix, lp: &LiftParams) -> SymMatrix {
    let n = q.dim();
    SymMatrix::from_lower_fn(2 * n, |i, j| {
        if i < n {
            q.get(i, j)
        } else if j < n {
            if i - n == j {
                0.5 * lp.u[j]
            } else {
                0.0
            }
        } else if i == j {
            lp.v[i - n]
        } else {
            0.0
        }
    })
}

/// `f(x, y) = x'Qx + c'x + h'y`.
pub fn plain_value(inst: &Instance, x: &[f64], y: &[f64]) -> f64 {
    inst.q.quad_form(x) + dot(&inst.c, x) + dot(&inst.h, y)
}

/// `f(x, y) + sum_i u_i x_i y_i + v_i y_i^2 - u_i x_i - v_i y_i`.
pub fn lifted_value(inst: &Instance, lp: &LiftParams, x: &[f64], y: &[f64]) -> f64 {
    let q: f64 = (0..inst.n)
        .map(|i| lp.u[i] * x[i] * y[i] + lp.v[i] * y[i] * y[i] - lp.u[i] * x[i] - lp.v[i] * y[i])
        .sum();
    plain_value(inst, x, y) + q
}

/// Perspective objective `x'(Q - diag rho)x + sum rho_i x_i^2 / y_i + c'x + h'y`
/// with `0/0 = 0`. Infinite when `y_i = 0 != x_i` and `rho_i > 0`.
pub fn perspective_value(inst: &Instance, rho: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let base = inst.q.minus_diag(rho).quad_form(x) + dot(&inst.c, x) + dot(&inst.h, y);
    let mut extra = 0.0;
    for i in 0..inst.n {
        if rho[i] == 0.0 || x[i] == 0.0 {
            continue;
        }
        if y[i] <= 0.0 {
            return f64::INFINITY;
        }
        extra += rho[i] * x[i] * x[i] / y[i];
    }
    base + extra
}

pub fn rho_uniform_mineig(inst: &Instance) -> Result<PerspectiveParams> {
    let lam = min_eigenvalue(&inst.q)?.max(0.0);
    Ok(PerspectiveParams { rho: vec![lam; inst.n] })
}

/// Pulls `rho` back into `{rho >= 0, Q - diag(rho) PSD}` by uniform downward
/// shifts, keeping a tiny eigenvalue margin.
pub fn make_rho_feasible(q: &SymMatrix, rho: &[f64]) -> Result<PerspectiveParams> {
    let n = q.dim();
    let scale = 1.0 + q.norm_inf();
    let margin = 1e-12 * scale;
    let mut r: Vec<f64> = rho.iter().map(|&v| if v.is_finite() { v.max(0.0) } else { 0.0 }).collect();
    for _ in 0..100 {
        let lam = min_eigenvalue(&q.minus_diag(&r))?;
        if lam >= 0.0 {
            return Ok(PerspectiveParams { rho: r });
        }
        let shift = -lam + margin;
        for v in r.iter_mut() {
            *v = (*v - shift).max(0.0);
        }
    }
    let lam = min_eigenvalue(q)?.max(0.0);
    Ok(PerspectiveParams { rho: vec![lam; n] })
}

/// `max e'rho s.t. rho >= 0, Q - diag(rho) PSD`.
pub fn build_rho_sdp(q: &SymMatrix) -> ConicProblem {
    let n = q.dim();
    let mut b = ConicBuilder::new();
    let rho = b.add_var("rho", n);
    for i in rho.clone() {
        b.minimize(i, -1.0);
        b.nonneg(AffineExpr::var(i, 1.0));
    }
    b.psd(n, |i, j| {
        let e = AffineExpr::constant(q.get(i, j));
        if i == j {
            e.plus(rho.start + i, -1.0)
        } else {
            e
        }
    });
    b.build()
}

pub fn rho_sdp_simple(inst: &Instance, settings: &ConicSettings) -> Result<PerspectiveParams> {
    let uniform = rho_uniform_mineig(inst)?;
    if inst.n == 0 {
        return Ok(uniform);
    }
    let p = build_rho_sdp(&inst.q);
    let sol = solve_conic(&p, settings)?;
    if sol.status != ConicStatus::Optimal && !sol.dual_usable(settings.eps) {
        return Ok(uniform);
    }
    let rho = make_rho_feasible(&inst.q, &extract(&sol, &p.layout, "rho")?)?;
    if rho.rho.iter().sum::<f64>() + 1e-9 < uniform.rho.iter().sum::<f64>() {
        return Ok(uniform);
    }
    Ok(rho)
}

fn row_expr(rows_a: &Matrix, rows_b: &Matrix, k: usize, x0: usize, y0: usize, sign: f64) -> AffineExpr {
    let mut e = AffineExpr::zero();
    for (i, &v) in rows_a.row(k).iter().enumerate() {
        e.add_term(x0 + i, sign * v);
    }
    for (i, &v) in rows_b.row(k).iter().enumerate() {
        e.add_term(y0 + i, sign * v);
    }
    e
}

/// The dual SDP whose optimal `rho` maximizes the perspective relaxation
/// bound. Spans: `rho, tau, eta, mu, pi, lambda`; maximizes `tau`.
pub fn build_sdp_l(inst: &Instance) -> ConicProblem {
    let n = inst.n;
    let rows = inst.inequality_rows(true);
    let m = rows.len();
    let mut b = ConicBuilder::new();
    let rho = b.add_var("rho", n);
    let tau = b.add_var("tau", 1).start;
    let eta = b.add_var("eta", m);
    let mu = b.add_var("mu", n);
    let pi = b.add_var("pi", n);
    let lam = b.add_var("lambda", n);
    b.minimize(tau, -1.0);
    for j in rho.clone().chain(eta.clone()).chain(mu.clone()).chain(pi.clone()) {
        b.nonneg(AffineExpr::var(j, 1.0));
    }
    for i in 0..n {
        let (ai, bi) = (inst.lb[i], inst.ub[i]);
        let p = AffineExpr::var(rho.start + i, 1.0).plus(mu.start + i, 1.0);
        let r = AffineExpr::constant(0.5 * inst.c[i])
            .plus(lam.start + i, -0.5)
            .plus(mu.start + i, -0.5 * (ai + bi));
        let mut s = AffineExpr::constant(inst.h[i]).plus(pi.start + i, 1.0).plus(mu.start + i, ai * bi);
        for k in 0..m {
            s.add_term(eta.start + k, rows.b.get(k, i));
        }
        b.psd2(p, r, s);
    }
    b.psd(n + 1, |i, j| {
        if i < n {
            let e = AffineExpr::constant(inst.q.get(i, j));
            if i == j {
                e.plus(rho.start + i, -1.0)
            } else {
                e
            }
        } else if j < n {
            let mut e = AffineExpr::var(lam.start + j, 0.5);
            for k in 0..m {
                e.add_term(eta.start + k, 0.5 * rows.a.get(k, j));
            }
            e
        } else {
            let mut e = AffineExpr::var(tau, -1.0);
            for k in 0..m {
                e.add_term(eta.start + k, -rows.rhs[k]);
            }
            for i in 0..n {
                e.add_term(pi.start + i, -1.0);
            }
            e
        }
    });
    b.build()
}

/// Continuous relaxation of the perspective reformulation as an SOCP over
/// `(x, y, phi)` with `phi_i y_i >= x_i^2`.
pub fn build_socp_relax(inst: &Instance, rho: &PerspectiveParams) -> ConicProblem {
    let n = inst.n;
    let mut b = ConicBuilder::new();
    let x = b.add_var("x", n);
    let y = b.add_var("y", n);
    let phi = b.add_var("phi", n);
    let qr = inst.q.minus_diag(&rho.rho);
    for i in 0..n {
        for j in 0..=i {
            let v = 2.0 * qr.get(i, j);
            if v != 0.0 {
                b.quadratic(x.start + i, x.start + j, v);
            }
        }
        b.minimize(x.start + i, inst.c[i]);
        b.minimize(y.start + i, inst.h[i]);
        b.minimize(phi.start + i, rho.rho[i]);
    }
    let eq = inst.equality_rows();
    for k in 0..eq.len() {
        b.zero(row_expr(&eq.a, &eq.b, k, x.start, y.start, -1.0).plus_const(eq.rhs[k]));
    }
    let rows = inst.inequality_rows(false);
    for k in 0..rows.len() {
        b.nonneg(row_expr(&rows.a, &rows.b, k, x.start, y.start, -1.0).plus_const(rows.rhs[k]));
    }
    for i in 0..n {
        b.nonneg(AffineExpr::var(x.start + i, 1.0).plus(y.start + i, -inst.lb[i]));
        b.nonneg(AffineExpr::var(y.start + i, inst.ub[i]).plus(x.start + i, -1.0));
        b.nonneg(AffineExpr::var(y.start + i, 1.0));
        b.nonneg(AffineExpr::constant(1.0).plus(y.start + i, -1.0));
    }
    for i in 0..n {
        b.soc(vec![
            AffineExpr::var(phi.start + i, 0.5).plus(y.start + i, 0.5),
            AffineExpr::var(x.start + i, 1.0),
            AffineExpr::var(phi.start + i, 0.5).plus(y.start + i, -0.5),
        ]);
    }
    b.build()
}

/// Lift parameters from an optimal `(x*, y*)` of the perspective relaxation:
/// `u_i = -2 rho_i r_i`, `v_i = rho_i r_i^2` with `r_i = x*_i / y*_i`, and
/// `(0, 0)` where `y*_i` is (numerically) zero.
pub fn recover_lift_params(rho: &PerspectiveParams, x: &[f64], y: &[f64]) -> Result<LiftParams> {
    recover_lift_params_with(rho, x, y, Y_ZERO_TOL, None)
}

/// As [`recover_lift_params`] with an explicit zero threshold and, when
/// given, the ratio `x_i / y_i` clamped into `[lb_i, ub_i]`.
pub fn recover_lift_params_with(
    rho: &PerspectiveParams,
    x: &[f64],
    y: &[f64],
    y_zero_tol: f64,
    bounds: Option<(&[f64], &[f64])>,
) -> Result<LiftParams> {
    let n = rho.rho.len();
    if x.len() != n || y.len() != n {
        return Err(Error::DegenerateInput(format!(
            "relaxation point has lengths ({}, {}), expected {n}",
            x.len(),
            y.len()
        )));
    }
    let mut lp = LiftParams::zeros(n);
    for i in 0..n {
        if !(x[i].is_finite() && y[i].is_finite() && rho.rho[i].is_finite()) {
            return Err(Error::DegenerateInput(format!("non-finite data at index {i}")));
        }
        if y[i] < -1e-6 {
            return Err(Error::DegenerateInput(format!("y[{i}] = {} is negative", y[i])));
        }
        if y[i] <= y_zero_tol {
            continue;
        }
        let mut r = x[i] / y[i];
        if let Some((lo, hi)) = bounds {
            r = r.clamp(lo[i], hi[i]);
        }
        let p = rho.rho[i].max(0.0);
        lp.u[i] = -2.0 * p * r;
        lp.v[i] = p * r * r;
    }
    Ok(lp)
}

/// Ratios `r_i = -zeta_i / (2 rho_i)` from the dual `zeta_i` of the `x_i`
/// entry of each perspective cone in [`build_socp_relax`]. The tangent
/// `2 rho_i r_i x - rho_i r_i^2 y` is the subgradient of `rho_i x^2 / y`
/// that the optimality conditions use, also where `y*_i = 0`.
pub fn dual_tangent_ratios(sol: &ConicSolution, p: &ConicProblem, rho: &PerspectiveParams) -> Vec<f64> {
    let off = p.cones.zero_dim + p.cones.nonneg_dim;
    rho.rho
        .iter()
        .enumerate()
        .map(|(i, &r)| if r > 0.0 { -sol.dual[off + 3 * i + 1] / (2.0 * r) } else { 0.0 })
        .collect()
}

/// Where `y*_i` is zero the perspective term is not differentiable and
/// `(0, 0)` can lose the bound; use the dual tangent there instead.
fn complete_zero_indices(lp: &mut LiftParams, rho: &PerspectiveParams, y: &[f64], ratios: &[f64]) {
    for i in 0..lp.u.len() {
        let (p, r) = (rho.rho[i].max(0.0), ratios[i]);
        if y[i] <= Y_ZERO_TOL && p > 0.0 && r.is_finite() {
            lp.u[i] = -2.0 * p * r;
            lp.v[i] = p * r * r;
        }
    }
}

/// `rho_i = u_i^2 / (4 v_i)`, and `0` where `v_i = 0`.
pub fn lift_params_to_rho(lp: &LiftParams) -> PerspectiveParams {
    PerspectiveParams {
        rho: lp
            .u
            .iter()
            .zip(&lp.v)
            .map(|(&u, &v)| if v > 0.0 { u * u / (4.0 * v) } else { 0.0 })
            .collect(),
    }
}

/// Which variable each `y_i` switches on, and its perspective epigraph
/// variable when present.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorLink {
    pub y: usize,
    pub x: usize,
    pub phi: Option<usize>,
}

/// `coefs . z <= rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Cut {
    pub fn activity(&self, z: &[f64]) -> f64 {
        self.coefs.iter().map(|&(i, c)| c * z[i]).sum()
    }

    pub fn violation(&self, z: &[f64]) -> f64 {
        self.activity(z) - self.rhs
    }
}

/// Data needed to separate perspective cuts in branch-and-cut.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveData {
    pub rho: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

/// Mixed-binary convex QP
///
/// ```text
///     min  z'Hz + linear'z + constant
///     s.t. ineq_matrix z <= ineq_rhs,  eq_matrix z = eq_rhs,  cuts,
///          lower <= z <= upper,  z_j binary where binary[j]
/// ```
#[derive(Debug, Clone)]
pub struct MiqpModel {
    pub layout: VariableLayout,
    pub hessian: SymMatrix,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub ineq_matrix: Matrix,
    pub ineq_rhs: Vec<f64>,
    pub eq_matrix: Matrix,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub binary: Vec<bool>,
    pub links: Vec<IndicatorLink>,
    pub cuts: Vec<Cut>,
    pub cardinality: Option<usize>,
    pub perspective: Option<PerspectiveData>,
}

impl MiqpModel {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.hessian.quad_form(z) + dot(&self.linear, z) + self.constant
    }

    pub fn x_indices(&self) -> Vec<usize> {
        self.links.iter().map(|l| l.x).collect()
    }

    pub fn y_indices(&self) -> Vec<usize> {
        self.links.iter().map(|l| l.y).collect()
    }

    pub fn to_point(&self, z: &[f64]) -> SolverPoint {
        SolverPoint {
            x: self.links.iter().map(|l| z[l.x]).collect(),
            y: self.links.iter().map(|l| z[l.y]).collect(),
        }
    }

    /// Continuous relaxation with the given bounds, including the cut pool.
    pub fn relaxation(&self, lower: &[f64], upper: &[f64]) -> QpProblem {
        let mut qp = QpProblem::new(self.hessian.scaled(2.0), self.linear.clone());
        qp.ineq_matrix = self.ineq_matrix.clone();
        qp.ineq_rhs = self.ineq_rhs.clone();
        qp.eq_matrix = self.eq_matrix.clone();
        qp.eq_rhs = self.eq_rhs.clone();
        let nv = self.num_vars();
        for c in &self.cuts {
            let mut row = vec![0.0; nv];
            for &(i, v) in &c.coefs {
                row[i] += v;
            }
            qp.push_ineq(&row, c.rhs);
        }
        qp.lower = lower.to_vec();
        qp.upper = upper.to_vec();
        qp
    }

    /// Lifts `(x, y)` into this model's variables, completing `phi` with
    /// `x^2 / y` and slacks with the row residuals.
    pub fn embed(&self, inst: &Instance, p: &SolverPoint) -> Vec<f64> {
        let mut z = vec![0.0; self.num_vars()];
        for (i, l) in self.links.iter().enumerate() {
            z[l.x] = p.x[i];
            z[l.y] = p.y[i];
            if let Some(f) = l.phi {
                z[f] = if p.y[i] > 0.0 { p.x[i] * p.x[i] / p.y[i] } else { 0.0 };
            }
        }
        if let Ok(s) = self.layout.span("s") {
            let rows = inst.inequality_rows(false);
            for k in 0..rows.len() {
                z[s.start + k] = rows.rhs[k] - rows.activity(k, &p.x, &p.y);
            }
        }
        z
    }

    pub fn add_cut(&mut self, cut: Cut) {
        self.cuts.push(cut);
    }
}

/// Shared skeleton: variables `(x, y, extra...)`, semi-continuity rows,
/// equality rows and, unless `slack` is set, the inequality rows.
fn skeleton(inst: &Instance, with_phi: bool, slack: bool) -> MiqpModel {
    let n = inst.n;
    let mut layout = VariableLayout::new();
    let x = layout.add("x", n);
    let y = layout.add("y", n);
    let phi = if with_phi { Some(layout.add("phi", n)) } else { None };
    let rows = inst.inequality_rows(false);
    let s = if slack { Some(layout.add("s", rows.len())) } else { None };
    let nv = layout.len();

    let mut ineq = Matrix::zeros(0, nv);
    let mut ineq_rhs = Vec::new();
    let mut eq = Matrix::zeros(0, nv);
    let mut eq_rhs = Vec::new();
    for k in 0..rows.len() {
        let mut row = vec![0.0; nv];
        row[x.clone()].copy_from_slice(rows.a.row(k));
        row[y.clone()].copy_from_slice(rows.b.row(k));
        match &s {
            Some(s) => {
                row[s.start + k] = 1.0;
                eq.push_row(&row);
                eq_rhs.push(rows.rhs[k]);
            }
            None => {
                ineq.push_row(&row);
                ineq_rhs.push(rows.rhs[k]);
            }
        }
    }
    let erows = inst.equality_rows();
    for k in 0..erows.len() {
        let mut row = vec![0.0; nv];
        row[x.clone()].copy_from_slice(erows.a.row(k));
        row[y.clone()].copy_from_slice(erows.b.row(k));
        eq.push_row(&row);
        eq_rhs.push(erows.rhs[k]);
    }
    for i in 0..n {
        let mut row = vec![0.0; nv];
        row[y.start + i] = inst.lb[i];
        row[x.start + i] = -1.0;
        ineq.push_row(&row);
        ineq_rhs.push(0.0);
        let mut row = vec![0.0; nv];
        row[x.start + i] = 1.0;
        row[y.start + i] = -inst.ub[i];
        ineq.push_row(&row);
        ineq_rhs.push(0.0);
    }
    let mut lower = vec![0.0; nv];
    let mut upper = vec![f64::INFINITY; nv];
    for i in 0..n {
        lower[x.start + i] = inst.lb[i].min(0.0);
        upper[x.start + i] = inst.ub[i].max(0.0);
        upper[y.start + i] = 1.0;
        if let Some(p) = &phi {
            upper[p.start + i] = inst.lb[i].powi(2).max(inst.ub[i].powi(2));
        }
    }
    let mut binary = vec![false; nv];
    binary[y.clone()].iter_mut().for_each(|b| *b = true);
    let links = (0..n)
        .map(|i| IndicatorLink { y: y.start + i, x: x.start + i, phi: phi.as_ref().map(|p| p.start + i) })
        .collect();
    MiqpModel {
        layout,
        hessian: SymMatrix::zeros(nv),
        linear: vec![0.0; nv],
        constant: 0.0,
        ineq_matrix: ineq,
        ineq_rhs,
        eq_matrix: eq,
        eq_rhs,
        lower,
        upper,
        binary,
        links,
        cuts: Vec::new(),
        cardinality: inst.cardinality,
        perspective: None,
    }
}

/// The original problem as an MIQP over `(x, y)`.
pub fn build_plain(inst: &Instance) -> MiqpModel {
    let mut m = skeleton(inst, false, false);
    let n = inst.n;
    for i in 0..n {
        for j in 0..=i {
            m.hessian.set(i, j, inst.q.get(i, j));
        }
        m.linear[i] = inst.c[i];
        m.linear[n + i] = inst.h[i];
    }
    m
}

/// Perspective-cut model over `(x, y, phi)`: objective
/// `x'(Q - diag rho)x + c'x + h'y + rho'phi`, seeded with the cuts at both
/// interval ends. Further cuts are separated during the search.
pub fn build_pc(inst: &Instance, rho: &PerspectiveParams) -> MiqpModel {
    let mut m = skeleton(inst, true, false);
    let n = inst.n;
    let qr = inst.q.minus_diag(&rho.rho);
    for i in 0..n {
        for j in 0..=i {
            m.hessian.set(i, j, qr.get(i, j));
        }
        m.linear[i] = inst.c[i];
        m.linear[n + i] = inst.h[i];
        m.linear[2 * n + i] = rho.rho[i];
    }
    for i in 0..n {
        if rho.rho[i] <= 0.0 {
            continue;
        }
        for &xb in &[inst.lb[i], inst.ub[i]] {
            m.add_cut(perspective_cut_row(&m.links[i], xb));
        }
    }
    m.perspective = Some(PerspectiveData { rho: rho.rho.clone(), lb: inst.lb.clone(), ub: inst.ub.clone() });
    m
}

/// `2 xb x - xb^2 y - phi <= 0`
pub fn perspective_cut_row(link: &IndicatorLink, xb: f64) -> Cut {
    let phi = link.phi.expect("perspective cut needs an epigraph variable");
    Cut { coefs: vec![(link.x, 2.0 * xb), (link.y, -xb * xb), (phi, -1.0)], rhs: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspectiveCut {
    /// tangent point
    pub xbar: f64,
    /// `x^2 / y - phi` at the separated point
    pub violation: f64,
}

impl PerspectiveCut {
    /// Right-hand side `2 xbar x - xbar^2 y` of `phi >= ...`.
    pub fn lower_bound(&self, x: f64, y: f64) -> f64 {
        2.0 * self.xbar * x - self.xbar * self.xbar * y
    }
}

/// Separation threshold on `x^2 / y - phi`.
pub const CUT_TOL: f64 = 1e-6;

/// Separates `phi >= 2 xbar x - xbar^2 y` at `xbar = clamp(x / y, a, b)`
/// when `y > ytol` and `phi < x^2 / y - ctol`.
#[allow(clippy::too_many_arguments)]
pub fn separate_perspective_cut(
    rho_i: f64,
    x_i: f64,
    y_i: f64,
    phi_i: f64,
    a_i: f64,
    b_i: f64,
    ctol: f64,
    ytol: f64,
) -> Option<PerspectiveCut> {
    debug_assert!(rho_i >= 0.0);
    if !(y_i > ytol) {
        return None;
    }
    let persp = x_i * x_i / y_i;
    if !(phi_i < persp - ctol) {
        return None;
    }
    let xbar = (x_i / y_i).clamp(a_i, b_i);
    let cut = PerspectiveCut { xbar, violation: persp - phi_i };
    // clamping can weaken the cut below the violation threshold
    if cut.lower_bound(x_i, y_i) - phi_i <= ctol * 1e-3 {
        return None;
    }
    Some(cut)
}

fn repair_threshold(h: &SymMatrix) -> f64 {
    PSD_TOL * (1.0 + h.norm_inf())
}

/// Shifts `v_i > 0` up by `-lambda_min` when the Hessian is marginally
/// indefinite.
fn repair_lift(q: &SymMatrix, lp: &LiftParams) -> Result<LiftParams> {
    let h = lifted_hessian(q, lp);
    let lam = min_eigenvalue(&h)?;
    if lam >= 0.0 {
        return Ok(lp.clone());
    }
    if lam <= -repair_threshold(&h) {
        return Err(Error::ConvexityViolation { min_eigenvalue: lam });
    }
    let mut out = lp.clone();
    for v in out.v.iter_mut().filter(|v| **v > 0.0) {
        *v -= lam;
    }
    let lam2 = min_eigenvalue(&lifted_hessian(q, &out))?;
    if lam2 < -1e-3 * repair_threshold(&h) {
        return Err(Error::ConvexityViolation { min_eigenvalue: lam2 });
    }
    Ok(out)
}

/// Lifted model: Hessian `[[Q, diag(u)/2], [diag(u)/2, diag(v)]]`, linear
/// term `(c - u, h - v)`.
pub fn build_lcr(inst: &Instance, lp: &LiftParams) -> Result<MiqpModel> {
    let lp = repair_lift(&inst.q, lp)?;
    let mut m = build_plain(inst);
    let n = inst.n;
    for i in 0..n {
        m.hessian.set(n + i, i, 0.5 * lp.u[i]);
        m.hessian.set(n + i, n + i, lp.v[i]);
        m.linear[i] -= lp.u[i];
        m.linear[n + i] -= lp.v[i];
    }
    Ok(m)
}

/// Dual SDP whose optimal `(u, v)` maximize the lifted relaxation bound.
/// Spans: `u, v, tau, eta, mu, sigma, lambda, pi`; maximizes `tau`.
pub fn build_sdp_q(inst: &Instance) -> ConicProblem {
    let n = inst.n;
    let rows = inst.inequality_rows(true);
    let m = rows.len();
    let mut b = ConicBuilder::new();
    let u = b.add_var("u", n);
    let v = b.add_var("v", n);
    let tau = b.add_var("tau", 1).start;
    let eta = b.add_var("eta", m);
    let mu = b.add_var("mu", n);
    let sigma = b.add_var("sigma", n);
    let lam = b.add_var("lambda", n);
    let pi = b.add_var("pi", n);
    b.minimize(tau, -1.0);
    for j in eta.clone().chain(mu.clone()).chain(sigma.clone()).chain(lam.clone()).chain(pi.clone()) {
        b.nonneg(AffineExpr::var(j, 1.0));
    }
    // alpha = c - u + A'eta - mu + sigma
    let alpha = |i: usize| {
        let mut e = AffineExpr::constant(inst.c[i]).plus(u.start + i, -1.0).plus(mu.start + i, -1.0).plus(sigma.start + i, 1.0);
        for k in 0..m {
            e.add_term(eta.start + k, rows.a.get(k, i));
        }
        e
    };
    // beta = h - v + B'eta + diag(a) mu - diag(b) sigma - lambda + pi
    let beta = |i: usize| {
        let mut e = AffineExpr::constant(inst.h[i])
            .plus(v.start + i, -1.0)
            .plus(mu.start + i, inst.lb[i])
            .plus(sigma.start + i, -inst.ub[i])
            .plus(lam.start + i, -1.0)
            .plus(pi.start + i, 1.0);
        for k in 0..m {
            e.add_term(eta.start + k, rows.b.get(k, i));
        }
        e
    };
    b.psd(2 * n + 1, |i, j| {
        if i < n {
            AffineExpr::constant(inst.q.get(i, j))
        } else if i < 2 * n {
            let ii = i - n;
            if j < n {
                if ii == j {
                    AffineExpr::var(u.start + j, 0.5)
                } else {
                    AffineExpr::zero()
                }
            } else if i == j {
                AffineExpr::var(v.start + ii, 1.0)
            } else {
                AffineExpr::zero()
            }
        } else if j < n {
            alpha(j).scaled(0.5)
        } else if j < 2 * n {
            beta(j - n).scaled(0.5)
        } else {
            let mut e = AffineExpr::var(tau, -1.0);
            for k in 0..m {
                e.add_term(eta.start + k, -rows.rhs[k]);
            }
            for i in 0..n {
                e.add_term(pi.start + i, -1.0);
            }
            e
        }
    });
    b.build()
}

/// Dual SDP for the combined lift-and-convexify + QCR parameters.
/// Spans: `u, v, w, t, tau, eta, zeta, delta, mu, sigma, lambda, pi`;
/// maximizes `tau`. Inequality rows (instance rows and the cardinality row)
/// get slacks `s >= 0`; equality rows are used natively.
pub fn build_sdp_a(inst: &Instance) -> ConicProblem {
    let n = inst.n;
    let rows = inst.inequality_rows(false);
    let m = rows.len();
    let eq = inst.equality_rows();
    let me = eq.len();
    let (ra, rb, d) = (&rows.a, &rows.b, &rows.rhs);
    let (ea, eb, g) = (&eq.a, &eq.b, &eq.rhs);

    let mut b = ConicBuilder::new();
    let u = b.add_var("u", n);
    let v = b.add_var("v", n);
    let w = b.add_var("w", me);
    let t = b.add_var("t", m);
    let tau = b.add_var("tau", 1).start;
    let eta = b.add_var("eta", m);
    let zeta = b.add_var("zeta", me);
    let delta = b.add_var("delta", m);
    let mu = b.add_var("mu", n);
    let sigma = b.add_var("sigma", n);
    let lam = b.add_var("lambda", n);
    let pi = b.add_var("pi", n);
    b.minimize(tau, -1.0);
    for j in delta.clone().chain(mu.clone()).chain(sigma.clone()).chain(lam.clone()).chain(pi.clone()) {
        b.nonneg(AffineExpr::var(j, 1.0));
    }

    // column accessors of [A B] and [E F] over the stacked (x, y) index
    let col_a = |k: usize, j: usize| if j < n { ra.get(k, j) } else { rb.get(k, j - n) };
    let col_e = |k: usize, j: usize| if j < n { ea.get(k, j) } else { eb.get(k, j - n) };

    // penalty curvature: sum_k w_k e_ki e_kj + sum_k t_k a_ki a_kj
    let penalty = |i: usize, j: usize| {
        let mut e = AffineExpr::zero();
        for k in 0..me {
            e.add_term(w.start + k, col_e(k, i) * col_e(k, j));
        }
        for k in 0..m {
            e.add_term(t.start + k, col_a(k, i) * col_a(k, j));
        }
        e
    };
    // linear coefficient of (x, y) in the Lagrangian, halved later
    let linear = |j: usize| {
        let mut e = if j < n {
            AffineExpr::constant(inst.c[j])
                .plus(u.start + j, -1.0)
                .plus(mu.start + j, -1.0)
                .plus(sigma.start + j, 1.0)
        } else {
            let i = j - n;
            AffineExpr::constant(inst.h[i])
                .plus(v.start + i, -1.0)
                .plus(mu.start + i, inst.lb[i])
                .plus(sigma.start + i, -inst.ub[i])
                .plus(lam.start + i, -1.0)
                .plus(pi.start + i, 1.0)
        };
        for k in 0..m {
            let a = col_a(k, j);
            e.add_term(eta.start + k, a);
            e.add_term(t.start + k, -2.0 * a * d[k]);
        }
        for k in 0..me {
            let a = col_e(k, j);
            e.add_term(zeta.start + k, a);
            e.add_term(w.start + k, -2.0 * a * g[k]);
        }
        e
    };
    let side = 2 * n + m + 1;
    b.psd(side, |i, j| {
        let last = side - 1;
        if i < 2 * n {
            // (x, y) x (x, y) block
            let mut e = penalty(i, j);
            if i < n {
                e = e.plus_const(inst.q.get(i, j));
            } else if j < n {
                if i - n == j {
                    e.add_term(u.start + j, 0.5);
                }
            } else if i == j {
                e.add_term(v.start + i - n, 1.0);
            }
            e
        } else if i < 2 * n + m {
            let k = i - 2 * n;
            if j < 2 * n {
                AffineExpr::var(t.start + k, col_a(k, j))
            } else if i == j {
                AffineExpr::var(t.start + k, 1.0)
            } else {
                AffineExpr::zero()
            }
        } else if j < 2 * n {
            linear(j).scaled(0.5)
        } else if j < last {
            let k = j - 2 * n;
            AffineExpr::var(eta.start + k, 0.5).plus(delta.start + k, -0.5).plus(t.start + k, -d[k])
        } else {
            let mut e = AffineExpr::var(tau, -1.0);
            for k in 0..m {
                e.add_term(eta.start + k, -d[k]);
                e.add_term(t.start + k, d[k] * d[k]);
            }
            for k in 0..me {
                e.add_term(zeta.start + k, -g[k]);
                e.add_term(w.start + k, g[k] * g[k]);
            }
            for i in 0..n {
                e.add_term(pi.start + i, -1.0);
            }
            e
        }
    });
    b.build()
}

pub fn extract_qcr_params(sol: &ConicSolution, layout: &VariableLayout) -> Result<QcrParams> {
    Ok(QcrParams {
        u: extract(sol, layout, "u")?,
        v: extract(sol, layout, "v")?,
        w: extract(sol, layout, "w")?,
        t: extract(sol, layout, "t")?,
    })
}

/// Lifted model with QCR penalties over `(x, y, s)`:
/// `f + sum q_i + (Ex + Fy - g)' W (Ex + Fy - g) + (Ax + By + s - d)' T (Ax + By + s - d)`
/// subject to `Ax + By + s = d`, `s >= 0`, `Ex + Fy = g`.
pub fn build_qcr(inst: &Instance, qp: &QcrParams) -> Result<MiqpModel> {
    let n = inst.n;
    let mut m = skeleton(inst, false, true);
    let rows = inst.inequality_rows(false);
    let eq = inst.equality_rows();
    let s0 = 2 * n;
    let nv = m.num_vars();
    if qp.u.len() != n || qp.v.len() != n || qp.w.len() != eq.len() || qp.t.len() != rows.len() {
        return Err(Error::DimensionMismatch("QCR parameter lengths do not match the instance".into()));
    }
    // residual rows r_k(z) = a_k . z - rhs_k over the full variable vector
    let mut residuals: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for k in 0..eq.len() {
        let mut row = vec![0.0; nv];
        row[..n].copy_from_slice(eq.a.row(k));
        row[n..2 * n].copy_from_slice(eq.b.row(k));
        residuals.push((row, eq.rhs[k], qp.w[k]));
    }
    for k in 0..rows.len() {
        let mut row = vec![0.0; nv];
        row[..n].copy_from_slice(rows.a.row(k));
        row[n..2 * n].copy_from_slice(rows.b.row(k));
        row[s0 + k] = 1.0;
        residuals.push((row, rows.rhs[k], qp.t[k]));
    }
    let mut h = SymMatrix::zeros(nv);
    let mut lin = vec![0.0; nv];
    let mut constant = 0.0;
    for i in 0..n {
        for j in 0..=i {
            h.set(i, j, inst.q.get(i, j));
        }
        h.set(n + i, i, 0.5 * qp.u[i]);
        h.set(n + i, n + i, qp.v[i]);
        lin[i] = inst.c[i] - qp.u[i];
        lin[n + i] = inst.h[i] - qp.v[i];
    }
    for (row, rhs, wt) in &residuals {
        if *wt == 0.0 {
            continue;
        }
        let nz: Vec<usize> = (0..nv).filter(|&j| row[j] != 0.0).collect();
        for (a, &i) in nz.iter().enumerate() {
            for &j in &nz[..=a] {
                let val = h.get(i, j) + wt * row[i] * row[j];
                h.set(i, j, val);
            }
            lin[i] -= 2.0 * wt * rhs * row[i];
        }
        constant += wt * rhs * rhs;
    }
    let lam = min_eigenvalue(&h)?;
    if lam < 0.0 {
        let thr = repair_threshold(&h);
        if lam <= -thr {
            return Err(Error::ConvexityViolation { min_eigenvalue: lam });
        }
        // bounded variables absorb the shift without changing binary points:
        // v_i y_i^2 - v_i y_i vanishes at y in {0, 1}
        for i in 0..n {
            if qp.v[i] > 0.0 {
                let idx = n + i;
                h.set(idx, idx, h.get(idx, idx) - lam);
                lin[idx] += lam;
            }
        }
        let lam2 = min_eigenvalue(&h)?;
        if lam2 < -1e-3 * thr {
            return Err(Error::ConvexityViolation { min_eigenvalue: lam2 });
        }
    }
    m.hessian = h;
    m.linear = lin;
    m.constant = constant;
    Ok(m)
}

/// Output of the production parameter pipeline: the rho SDP, then one
/// perspective SOCP, then closed-form recovery of `(u, v)`.
#[derive(Debug, Clone)]
pub struct LcrParameters {
    pub rho: PerspectiveParams,
    pub lift: LiftParams,
    /// `tau*` of the rho SDP, when it converged
    pub sdp_bound: Option<f64>,
    /// optimal value of the perspective SOCP relaxation
    pub socp_bound: f64,
    pub socp_status: ConicStatus,
    pub socp_point: SolverPoint,
    pub time_sdp: f64,
    pub time_socp: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoChoice {
    /// best rho for the relaxation bound
    #[default]
    Optimal,
    /// `max e'rho` over the feasible set
    Simple,
    /// uniform smallest eigenvalue
    MinEig,
    Zero,
}

pub fn perspective_params(inst: &Instance, choice: RhoChoice, settings: &ConicSettings) -> Result<(PerspectiveParams, Option<f64>, Vec<String>)> {
    let mut notes = Vec::new();
    match choice {
        RhoChoice::Zero => Ok((PerspectiveParams::zeros(inst.n), None, notes)),
        RhoChoice::MinEig => Ok((rho_uniform_mineig(inst)?, None, notes)),
        RhoChoice::Simple => Ok((rho_sdp_simple(inst, settings)?, None, notes)),
        RhoChoice::Optimal => {
            let p = build_sdp_l(inst);
            let sol = solve_conic(&p, settings)?;
            let usable = sol.status == ConicStatus::Optimal || sol.dual_usable(settings.eps);
            if !usable {
                notes.push(format!("rho SDP ended with {:?}; using the eigenvalue heuristic", sol.status));
                return Ok((rho_uniform_mineig(inst)?, None, notes));
            }
            let rho = make_rho_feasible(&inst.q, &extract(&sol, &p.layout, "rho")?)?;
            let tau = extract(&sol, &p.layout, "tau")?[0];
            Ok((rho, Some(tau), notes))
        }
    }
}

pub fn lcr_parameters(inst: &Instance, choice: RhoChoice, settings: &ConicSettings) -> Result<LcrParameters> {
    let t0 = Instant::now();
    let (rho, sdp_bound, mut notes) = perspective_params(inst, choice, settings)?;
    let time_sdp = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let p = build_socp_relax(inst, &rho);
    let sol = solve_conic(&p, settings)?;
    let time_socp = t1.elapsed().as_secs_f64();
    if sol.status != ConicStatus::Optimal {
        notes.push(format!("perspective SOCP ended with {:?}", sol.status));
    }
    let x = extract(&sol, &p.layout, "x")?;
    let y: Vec<f64> = extract(&sol, &p.layout, "y")?.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut lift = recover_lift_params_with(&rho, &x, &y, Y_ZERO_TOL, Some((&inst.lb, &inst.ub)))?;
    complete_zero_indices(&mut lift, &rho, &y, &dual_tangent_ratios(&sol, &p, &rho));
    Ok(LcrParameters {
        rho,
        lift,
        sdp_bound,
        socp_bound: sol.primal_obj,
        socp_status: sol.status,
        socp_point: SolverPoint { x, y },
        time_sdp,
        time_socp,
        notes,
    })
}

/// Optimal value of a model's continuous relaxation.
pub fn relaxation_bound(model: &MiqpModel) -> Result<f64> {
    let sol = solve_qp(&model.relaxation(&model.lower, &model.upper))?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.obj + model.constant),
        QpStatus::Infeasible => Err(Error::Infeasible),
        QpStatus::IterLimit => Err(Error::Solver("relaxation QP hit the iteration limit".into())),
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub plain: f64,
    pub sdp_l: f64,
    pub socp: f64,
    pub lcr: f64,
    pub sdp_a: f64,
}

#[derive(Debug, Clone)]
pub struct BoundOptions {
    pub conic: ConicSettings,
    pub rho: RhoChoice,
    /// compute the QCR bound (only meaningful with an equality block)
    pub qcr: bool,
    pub opt: Option<f64>,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { conic: ConicSettings::default(), rho: RhoChoice::Optimal, qcr: true, opt: None }
    }
}

/// Bounds from each reformulation. Unavailable bounds are `-inf`, with the
/// reason in `notes`.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub bound_plain: f64,
    pub bound_pr: f64,
    pub bound_lcr: f64,
    pub bound_qcr: Option<f64>,
    pub opt: Option<f64>,
    pub impr: Option<f64>,
    pub timings: StageTimings,
    pub rho: Option<PerspectiveParams>,
    pub lift: Option<LiftParams>,
    pub qcr_params: Option<QcrParams>,
    pub notes: Vec<String>,
}

/// `(qcr - lcr) / (opt - lcr)`, undefined when the denominator vanishes.
pub fn improvement(bound_qcr: f64, bound_lcr: f64, opt: f64) -> Option<f64> {
    let den = opt - bound_lcr;
    if !(den.abs() > 1e-9 * (1.0 + opt.abs())) || !bound_qcr.is_finite() || !bound_lcr.is_finite() {
        return None;
    }
    Some((bound_qcr - bound_lcr) / den)
}

pub fn bound_compare(inst: &Instance, opts: &BoundOptions) -> BoundReport {
    let mut r = BoundReport {
        bound_plain: f64::NEG_INFINITY,
        bound_pr: f64::NEG_INFINITY,
        bound_lcr: f64::NEG_INFINITY,
        bound_qcr: None,
        opt: opts.opt,
        impr: None,
        timings: StageTimings::default(),
        rho: None,
        lift: None,
        qcr_params: None,
        notes: Vec::new(),
    };
    let t = Instant::now();
    match relaxation_bound(&build_plain(inst)) {
        Ok(v) => r.bound_plain = v,
        Err(e) => r.notes.push(format!("plain relaxation: {e}")),
    }
    r.timings.plain = t.elapsed().as_secs_f64();

    match lcr_parameters(inst, opts.rho, &opts.conic) {
        Ok(p) => {
            r.timings.sdp_l = p.time_sdp;
            r.timings.socp = p.time_socp;
            r.bound_pr = p.socp_bound;
            r.notes.extend(p.notes.iter().cloned());
            let t = Instant::now();
            match build_lcr(inst, &p.lift).and_then(|m| relaxation_bound(&m)) {
                Ok(v) => r.bound_lcr = v,
                Err(e) => r.notes.push(format!("lifted relaxation: {e}")),
            }
            r.timings.lcr = t.elapsed().as_secs_f64();
            r.rho = Some(p.rho);
            r.lift = Some(p.lift);
        }
        Err(e) => r.notes.push(format!("parameter pipeline: {e}")),
    }

    if opts.qcr && inst.equality.is_some() {
        let t = Instant::now();
        let p = build_sdp_a(inst);
        match solve_conic(&p, &opts.conic) {
            Ok(sol) if sol.status == ConicStatus::Optimal || sol.dual_usable(opts.conic.eps) => {
                r.bound_qcr = extract(&sol, &p.layout, "tau").ok().map(|t| t[0]);
                r.qcr_params = extract_qcr_params(&sol, &p.layout).ok();
            }
            Ok(sol) => r.notes.push(format!("QCR SDP ended with {:?}", sol.status)),
            Err(e) => r.notes.push(format!("QCR SDP: {e}")),
        }
        r.timings.sdp_a = t.elapsed().as_secs_f64();
    }
    if let (Some(q), Some(opt)) = (r.bound_qcr, r.opt) {
        let base = if r.bound_lcr.is_finite() { r.bound_lcr } else { r.bound_pr };
        r.impr = improvement(q, base, opt);
    }
    r
}
