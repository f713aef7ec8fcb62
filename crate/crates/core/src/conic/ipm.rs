//! Primal-dual interior-point method with Nesterov-Todd scaling.
//!
//! Zero-cone rows play the role of equality constraints `Az = b` with a free
//! multiplier; the remaining rows are `Gz + s = h` with `s` and its
//! multiplier in the self-dual cone. Each iteration solves the reduced system
//!
//! ```text
//!     [ P + G'(W'W)^{-1}G   A' ] [dz]
//!     [ A                   0  ] [dy]
//! ```
//!
//! once for the affine direction and once for the centered corrector.

use super::{Block, ConicProblem, ConicResiduals, ConicSettings, ConicSolution, ConicStatus, SQRT2};
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_mul_raw, mat_tr_mul_raw, norm_inf, sym_eigen, SymMatrix};

const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 3;
const MIN_STEP: f64 = 1e-10;
/// Iterations without halving either the worst residual or `mu` before
/// giving up.
const STALL_ITERS: usize = 20;

/// `(i, j)`, `i >= j`, for each position of a scaled lower-triangular vector.
fn svec_pairs(side: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(side * (side + 1) / 2);
    for j in 0..side {
        for i in j..side {
            out.push((i, j));
        }
    }
    out
}

fn smat(v: &[f64], side: usize) -> Vec<f64> {
    let mut m = vec![0.0; side * side];
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            let x = if i == j { v[k] } else { v[k] / SQRT2 };
            m[i * side + j] = x;
            m[j * side + i] = x;
            k += 1;
        }
    }
    m
}

/// Symmetrizes while packing.
fn svec_into(m: &[f64], side: usize, out: &mut [f64]) {
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            out[k] = if i == j { m[i * side + i] } else { 0.5 * SQRT2 * (m[i * side + j] + m[j * side + i]) };
            k += 1;
        }
    }
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// `A' X A`
fn congruence_t(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    mat_tr_mul_raw(n, a, &mat_mul_raw(n, x, a))
}

/// `A X A'`
fn congruence(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    let at = transpose(a, n);
    mat_mul_raw(n, a, &mat_mul_raw(n, x, &at))
}

fn eigen_raw(m: Vec<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut s = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            s.set(i, j, 0.5 * (m[i * n + j] + m[j * n + i]));
        }
    }
    let dec = sym_eigen(&s)?;
    Ok((dec.values, dec.vectors.as_slice().to_vec()))
}

/// Lower Cholesky factor, row-major; fails only on a non-positive pivot.
fn chol_raw(a: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let d = a[j * n + j] - dot(&l[j * n..j * n + j], &l[j * n..j * n + j]);
        if !(d > 0.0) {
            return Err(Error::Solver("iterate left the semidefinite cone".into()));
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let sij = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            l[i * n + j] = sij / djj;
        }
    }
    Ok(l)
}

/// One-sided Jacobi SVD of a square matrix: `A = U diag(sigma) V'`.
fn svd_raw(a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // work on columns of A' stored as rows for contiguous access
    let mut w = transpose(&a, n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (wp, wq) = (&w[p * n..(p + 1) * n], &w[q * n..(q + 1) * n]);
                let alpha = dot(wp, wp);
                let beta = dot(wq, wq);
                let gamma = dot(wp, wq);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for k in 0..n {
                    let (x, y) = (w[p * n + k], w[q * n + k]);
                    w[p * n + k] = c * x - sn * y;
                    w[q * n + k] = sn * x + c * y;
                    let (x, y) = (v[p * n + k], v[q * n + k]);
                    v[p * n + k] = c * x - sn * y;
                    v[q * n + k] = sn * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = vec![0.0; n];
    let mut u = vec![0.0; n * n];
    for j in 0..n {
        let norm = dot(&w[j * n..(j + 1) * n], &w[j * n..(j + 1) * n]).sqrt();
        sigma[j] = norm;
        for k in 0..n {
            u[k * n + j] = if norm > 0.0 { w[j * n + k] / norm } else { 0.0 };
        }
    }
    // rows of `v` hold the right singular vectors
    (u, sigma, transpose(&v, n))
}

fn soc_jordan(u: &[f64], v: &[f64], out: &mut [f64]) {
    out[0] = dot(u, v);
    for k in 1..u.len() {
        out[k] = u[0] * v[k] + v[0] * u[k];
    }
}

fn psd_jordan(u: &[f64], v: &[f64], side: usize, out: &mut [f64]) {
    let (a, b) = (smat(u, side), smat(v, side));
    let mut ab = mat_mul_raw(side, &a, &b);
    let ba = mat_mul_raw(side, &b, &a);
    for (x, y) in ab.iter_mut().zip(&ba) {
        *x = 0.5 * (*x + y);
    }
    svec_into(&ab, side, out);
}

/// Smallest positive root of `a t^2 + 2 b t + c` with `c > 0`, or infinity.
fn first_root(a: f64, b: f64, c: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-15 * scale {
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    let t = if b >= 0.0 { -b - sq } else { -b + sq };
    let mut best = f64::INFINITY;
    for r in [t / a, if t != 0.0 { c / t } else { f64::INFINITY }] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}

/// Per-block Nesterov-Todd scaling `W` with `W^{-T} s = W z = lambda`.
enum Scale {
    Zero,
    Nonneg { d: Vec<f64> },
    Soc { w: Vec<f64>, winv: Vec<f64> },
    Psd { r: Vec<f64>, rinv: Vec<f64>, t: Vec<f64>, lam: Vec<f64> },
}

struct Nt {
    blocks: Vec<(Block, Scale)>,
    /// `lambda` in the scaled lower-triangular layout.
    lambda: Vec<f64>,
}

fn soc_scaling(s: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = s.len();
    let jnorm = |v: &[f64]| v[0] * v[0] - v[1..].iter().map(|x| x * x).sum::<f64>();
    let (ns, nz) = (jnorm(s), jnorm(z));
    if !(ns > 0.0 && nz > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
        return Err(Error::Solver("iterate left the second-order cone".into()));
    }
    let (ns, nz) = (ns.sqrt(), nz.sqrt());
    let sb: Vec<f64> = s.iter().map(|v| v / ns).collect();
    let zb: Vec<f64> = z.iter().map(|v| v / nz).collect();
    let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
    let mut wb = vec![0.0; d];
    wb[0] = (sb[0] + zb[0]) / (2.0 * gamma);
    for k in 1..d {
        wb[k] = (sb[k] - zb[k]) / (2.0 * gamma);
    }
    let beta = (ns / nz).sqrt();
    let mut w = vec![0.0; d * d];
    let mut winv = vec![0.0; d * d];
    let c = 1.0 / (1.0 + wb[0]);
    for i in 0..d {
        for j in 0..d {
            let base = match (i, j) {
                (0, 0) => wb[0],
                (0, _) => wb[j],
                (_, 0) => wb[i],
                _ => (if i == j { 1.0 } else { 0.0 }) + c * wb[i] * wb[j],
            };
            let sign = if (i == 0) != (j == 0) { -1.0 } else { 1.0 };
            w[i * d + j] = beta * base;
            winv[i * d + j] = sign * base / beta;
        }
    }
    Ok((w, winv))
}

fn dense_mul(a: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        out[i] = dot(&a[i * d..(i + 1) * d], v);
    }
}

impl Nt {
    fn identity(blocks: &[Block], rows: usize) -> Nt {
        let blocks = blocks
            .iter()
            .map(|b| {
                let sc = match b {
                    Block::Zero(_) => Scale::Zero,
                    Block::Nonneg(r) => Scale::Nonneg { d: vec![1.0; r.len()] },
                    Block::Soc(r) => {
                        let d = r.len();
                        let mut w = vec![0.0; d * d];
                        for i in 0..d {
                            w[i * d + i] = 1.0;
                        }
                        Scale::Soc { w: w.clone(), winv: w }
                    }
                    Block::Psd(_, side) => {
                        let mut w = vec![0.0; side * side];
                        for i in 0..*side {
                            w[i * side + i] = 1.0;
                        }
                        Scale::Psd { r: w.clone(), rinv: w.clone(), t: w, lam: vec![1.0; *side] }
                    }
                };
                (b.clone(), sc)
            })
            .collect();
        Nt { blocks, lambda: vec![0.0; rows] }
    }

    fn new(blocks: &[Block], s: &[f64], z: &[f64]) -> Result<Nt> {
        let mut lambda = vec![0.0; s.len()];
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            let sc = match b {
                Block::Zero(_) => Scale::Zero,
                Block::Nonneg(r) => {
                    let mut d = Vec::with_capacity(r.len());
                    for i in r.clone() {
                        if !(s[i] > 0.0 && z[i] > 0.0) {
                            return Err(Error::Solver("iterate left the nonnegative orthant".into()));
                        }
                        d.push((s[i] / z[i]).sqrt());
                        lambda[i] = (s[i] * z[i]).sqrt();
                    }
                    Scale::Nonneg { d }
                }
                Block::Soc(r) => {
                    let (w, winv) = soc_scaling(&s[r.clone()], &z[r.clone()])?;
                    dense_mul(&w, &z[r.clone()], &mut lambda[r.clone()]);
                    Scale::Soc { w, winv }
                }
                Block::Psd(r, side) => {
                    let n = *side;
                    let ls = chol_raw(smat(&s[r.clone()], n), n)?;
                    let lz = chol_raw(smat(&z[r.clone()], n), n)?;
                    // Lz' Ls = U diag(lam) V'
                    let (u, lam, v) = svd_raw(mat_tr_mul_raw(n, &lz, &ls), n);
                    if !(lam.iter().all(|&x| x > 0.0)) {
                        return Err(Error::Solver("iterate left the semidefinite cone".into()));
                    }
                    // R = Ls V diag(lam)^{-1/2},  R^{-1} = diag(lam)^{-1/2} U' Lz'
                    let mut rm = mat_mul_raw(n, &ls, &v);
                    let mut rinv = mat_tr_mul_raw(n, &u, &transpose(&lz, n));
                    for i in 0..n {
                        for j in 0..n {
                            rm[i * n + j] /= lam[j].sqrt();
                            rinv[i * n + j] /= lam[i].sqrt();
                        }
                    }
                    let t = mat_tr_mul_raw(n, &rinv, &rinv);
                    let mut k = r.start;
                    for j in 0..n {
                        for i in j..n {
                            lambda[k] = if i == j { lam[i] } else { 0.0 };
                            k += 1;
                        }
                    }
                    Scale::Psd { r: rm, rinv, t, lam }
                }
            };
            out.push((b.clone(), sc));
        }
        Ok(Nt { blocks: out, lambda })
    }

    /// `W v`, `W' v`, `W^{-T} v`, `W^{-1} v` or `(W'W)^{-1} v`, blockwise.
    fn apply(&self, v: &[f64], op: Op) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (b, sc) in &self.blocks {
            match (b, sc) {
                (Block::Nonneg(r), Scale::Nonneg { d }) => {
                    for (k, i) in r.clone().enumerate() {
                        out[i] = match op {
                            Op::W | Op::Wt => d[k] * v[i],
                            Op::WinvT | Op::Winv => v[i] / d[k],
                            Op::WtwInv => v[i] / (d[k] * d[k]),
                        };
                    }
                }
                (Block::Soc(r), Scale::Soc { w, winv }) => {
                    let src = &v[r.clone()];
                    let dst = &mut out[r.clone()];
                    match op {
                        Op::W | Op::Wt => dense_mul(w, src, dst),
                        Op::WinvT | Op::Winv => dense_mul(winv, src, dst),
                        Op::WtwInv => {
                            let mut tmp = vec![0.0; src.len()];
                            dense_mul(winv, src, &mut tmp);
                            dense_mul(winv, &tmp, dst);
                        }
                    }
                }
                (Block::Psd(r, side), Scale::Psd { r: rm, rinv, t, .. }) => {
                    let n = *side;
                    let x = smat(&v[r.clone()], n);
                    let y = match op {
                        Op::W => congruence_t(rm, &x, n),
                        Op::Wt => congruence(rm, &x, n),
                        Op::WinvT => congruence(rinv, &x, n),
                        Op::Winv => congruence_t(rinv, &x, n),
                        Op::WtwInv => congruence(t, &x, n),
                    };
                    svec_into(&y, n, &mut out[r.clone()]);
                }
                _ => {}
            }
        }
        out
    }

    /// `lambda \ w`: the `x` with `lambda o x = w`.
    fn lambda_div(&self, w: &[f64]) -> Vec<f64> {
        let lam = &self.lambda;
        let mut out = vec![0.0; w.len()];
        for (b, sc) in &self.blocks {
            match (b, sc) {
                (Block::Nonneg(r), _) => {
                    for i in r.clone() {
                        out[i] = w[i] / lam[i];
                    }
                }
                (Block::Soc(r), _) => {
                    let (l, wv) = (&lam[r.clone()], &w[r.clone()]);
                    let det = l[0] * l[0] - l[1..].iter().map(|x| x * x).sum::<f64>();
                    let x0 = (l[0] * wv[0] - dot(&l[1..], &wv[1..])) / det;
                    let o = &mut out[r.clone()];
                    o[0] = x0;
                    for k in 1..l.len() {
                        o[k] = (wv[k] - x0 * l[k]) / l[0];
                    }
                }
                (Block::Psd(r, side), Scale::Psd { lam: ev, .. }) => {
                    let mut k = r.start;
                    for j in 0..*side {
                        for i in j..*side {
                            out[k] = 2.0 * w[k] / (ev[i] + ev[j]);
                            k += 1;
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn step_to_boundary(&self, d: &Direction) -> Result<f64> {
        if !d.ds_scaled.iter().chain(&d.dz_scaled).chain(&d.dx).all(|v| v.is_finite()) {
            return Err(Error::Solver("non-finite search direction".into()));
        }
        Ok(self.max_step(&d.ds_scaled)?.min(self.max_step(&d.dz_scaled)?))
    }

    /// Largest `t` with `lambda + t d` in the cone.
    fn max_step(&self, d: &[f64]) -> Result<f64> {
        let lam = &self.lambda;
        let mut best = f64::INFINITY;
        for (b, sc) in &self.blocks {
            let t = match (b, sc) {
                (Block::Nonneg(r), _) => r
                    .clone()
                    .filter(|&i| d[i] < 0.0)
                    .map(|i| -lam[i] / d[i])
                    .fold(f64::INFINITY, f64::min),
                (Block::Soc(r), _) => {
                    let (l, dv) = (&lam[r.clone()], &d[r.clone()]);
                    let a = dv[0] * dv[0] - dv[1..].iter().map(|x| x * x).sum::<f64>();
                    let bb = l[0] * dv[0] - dot(&l[1..], &dv[1..]);
                    let c = l[0] * l[0] - l[1..].iter().map(|x| x * x).sum::<f64>();
                    first_root(a, bb, c)
                }
                (Block::Psd(r, side), Scale::Psd { lam: ev, .. }) => {
                    let n = *side;
                    let mut m = smat(&d[r.clone()], n);
                    for i in 0..n {
                        for j in 0..n {
                            m[i * n + j] /= (ev[i] * ev[j]).sqrt();
                        }
                    }
                    let (vals, _) = eigen_raw(m, n)?;
                    if vals[0] < 0.0 {
                        -1.0 / vals[0]
                    } else {
                        f64::INFINITY
                    }
                }
                _ => f64::INFINITY,
            };
            best = best.min(t);
        }
        Ok(best)
    }
}

#[derive(Clone, Copy)]
enum Op {
    W,
    Wt,
    WinvT,
    Winv,
    #[cfg_attr(not(test), allow(dead_code))]
    WtwInv,
}

fn jordan(blocks: &[Block], u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for b in blocks {
        match b {
            Block::Zero(_) => {}
            Block::Nonneg(r) => {
                for i in r.clone() {
                    out[i] = u[i] * v[i];
                }
            }
            Block::Soc(r) => soc_jordan(&u[r.clone()], &v[r.clone()], &mut out[r.clone()]),
            Block::Psd(r, side) => psd_jordan(&u[r.clone()], &v[r.clone()], *side, &mut out[r.clone()]),
        }
    }
    out
}

fn identity(blocks: &[Block], rows: usize) -> Vec<f64> {
    let mut e = vec![0.0; rows];
    for b in blocks {
        match b {
            Block::Zero(_) => {}
            Block::Nonneg(r) => e[r.clone()].iter_mut().for_each(|x| *x = 1.0),
            Block::Soc(r) => e[r.start] = 1.0,
            Block::Psd(r, side) => {
                let mut k = r.start;
                for j in 0..*side {
                    e[k] = 1.0;
                    k += side - j;
                }
            }
        }
    }
    e
}

/// Smallest `t` with `v + t e` in the closed cone, i.e. minus the minimum
/// "eigenvalue" of `v` over all blocks.
fn cone_shift(blocks: &[Block], v: &[f64]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for b in blocks {
        let t = match b {
            Block::Zero(_) => continue,
            Block::Nonneg(r) => v[r.clone()].iter().map(|x| -x).fold(f64::NEG_INFINITY, f64::max),
            Block::Soc(r) => {
                let x = &v[r.clone()];
                x[1..].iter().map(|a| a * a).sum::<f64>().sqrt() - x[0]
            }
            Block::Psd(r, side) => -eigen_raw(smat(&v[r.clone()], *side), *side)?.0[0],
        };
        worst = worst.max(t);
    }
    Ok(worst)
}

/// Columns of the constraint matrix restricted to one PSD block.
struct PsdColumns {
    cols: Vec<(usize, Vec<(usize, f64)>)>,
}

struct Kkt<'a> {
    problem: &'a ConicProblem,
    p_rows: usize,
    psd_cols: Vec<PsdColumns>,
    pairs: Vec<Vec<(usize, usize)>>,
}

impl<'a> Kkt<'a> {
    fn new(problem: &'a ConicProblem, blocks: &'a [Block]) -> Self {
        let m = &problem.constraint_matrix;
        let mut psd_cols = Vec::new();
        let mut pairs = Vec::new();
        for b in blocks {
            if let Block::Psd(r, side) = b {
                let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.cols()];
                for i in r.clone() {
                    let (c, v) = m.row(i);
                    for (&j, &a) in c.iter().zip(v) {
                        by_col[j].push((i - r.start, a));
                    }
                }
                let cols = by_col.into_iter().enumerate().filter(|(_, e)| !e.is_empty()).collect();
                psd_cols.push(PsdColumns { cols });
                pairs.push(svec_pairs(*side));
            }
        }
        Kkt { problem, p_rows: problem.cones.zero_dim, psd_cols, pairs }
    }

    /// Dense reduced matrix, row-major, of order `n + p`.
    fn assemble(&self, nt: &Nt) -> Vec<f64> {
        let n = self.problem.num_vars();
        let dim = n + self.p_rows;
        let m = &self.problem.constraint_matrix;
        let mut k = vec![0.0; dim * dim];
        if let Some(p) = &self.problem.quadratic {
            for i in 0..n {
                k[i * dim..i * dim + n].copy_from_slice(p.row(i));
            }
        }
        let add_outer = |k: &mut [f64], ra: usize, rb: usize, h: f64| {
            let (ca, va) = m.row(ra);
            let (cb, vb) = m.row(rb);
            for (&i, &a) in ca.iter().zip(va) {
                for (&j, &bv) in cb.iter().zip(vb) {
                    k[i * dim + j] += h * a * bv;
                }
            }
        };
        let mut psd_k = 0;
        for (b, sc) in &nt.blocks {
            match (b, sc) {
                (Block::Zero(r), _) => {
                    for i in r.clone() {
                        let (c, v) = m.row(i);
                        for (&j, &a) in c.iter().zip(v) {
                            k[(n + i) * dim + j] = a;
                            k[j * dim + n + i] = a;
                        }
                    }
                }
                (Block::Nonneg(r), Scale::Nonneg { d }) => {
                    for (idx, i) in r.clone().enumerate() {
                        add_outer(&mut k, i, i, 1.0 / (d[idx] * d[idx]));
                    }
                }
                (Block::Soc(r), Scale::Soc { winv, .. }) => {
                    let dd = r.len();
                    let h = mat_mul_raw(dd, winv, winv);
                    for a in 0..dd {
                        for bb in 0..dd {
                            if h[a * dd + bb] != 0.0 {
                                add_outer(&mut k, r.start + a, r.start + bb, h[a * dd + bb]);
                            }
                        }
                    }
                }
                (Block::Psd(_, side), Scale::Psd { t, .. }) => {
                    self.add_psd(&mut k, dim, *side, t, psd_k);
                    psd_k += 1;
                }
                _ => {}
            }
        }
        k
    }

    fn add_psd(&self, k: &mut [f64], dim: usize, n: usize, t: &[f64], which: usize) {
        let cols = &self.psd_cols[which].cols;
        let pairs = &self.pairs[which];
        let mut y = vec![0.0; n * n];
        let mut ys = vec![0.0; pairs.len()];
        for (jpos, (cj, ej)) in cols.iter().enumerate() {
            // Y = T mat(g_j) T
            if ej.len() * 2 > n {
                let mut g = vec![0.0; pairs.len()];
                for &(idx, v) in ej {
                    g[idx] = v;
                }
                y = congruence(t, &smat(&g, n), n);
            } else {
                y.iter_mut().for_each(|x| *x = 0.0);
                for &(idx, v) in ej {
                    let (a, b) = pairs[idx];
                    if a == b {
                        for i in 0..n {
                            let ti = v * t[i * n + a];
                            if ti != 0.0 {
                                for jj in 0..n {
                                    y[i * n + jj] += ti * t[jj * n + a];
                                }
                            }
                        }
                    } else {
                        let f = v / SQRT2;
                        for i in 0..n {
                            let (ta, tb) = (f * t[i * n + a], f * t[i * n + b]);
                            for jj in 0..n {
                                y[i * n + jj] += ta * t[jj * n + b] + tb * t[jj * n + a];
                            }
                        }
                    }
                }
            }
            svec_into(&y, n, &mut ys);
            for (ci, ei) in &cols[jpos..] {
                let h: f64 = ei.iter().map(|&(idx, v)| v * ys[idx]).sum();
                k[ci * dim + cj] += h;
                if ci != cj {
                    k[cj * dim + ci] += h;
                }
            }
        }
    }
}

/// LDL' of the quasi-definite reduced matrix. Pivots that collapse relative
/// to their original diagonal are replaced by a huge value of the expected
/// sign, which zeroes that component of the solution instead of amplifying
/// rounding errors.
struct Ldl {
    dim: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

const REG: f64 = 1e-13;

/// Diagonal regularization scale. Per-column keeps well-posed problems
/// accurate; the global scale damps near-null directions that otherwise
/// collapse the step length.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Reg {
    Column,
    Global,
}
const PIVOT_SKIP: f64 = 1e128;
const PIVOT_REL_TOL: f64 = 1e-14;

impl Ldl {
    fn factor(mut a: Vec<f64>, dim: usize, n_pos: usize) -> Self {
        let mut d = vec![0.0; dim];
        let mut work = vec![0.0; dim];
        for j in 0..dim {
            let orig = a[j * dim + j].abs().max(1e-300);
            for k in 0..j {
                work[k] = a[j * dim + k] * d[k];
            }
            let mut djj = a[j * dim + j] - dot(&a[j * dim..j * dim + j], &work[..j]);
            let positive = j < n_pos;
            if (positive && djj <= PIVOT_REL_TOL * orig) || (!positive && djj >= -PIVOT_REL_TOL * orig) {
                djj = if positive { PIVOT_SKIP } else { -PIVOT_SKIP };
            }
            d[j] = djj;
            for i in j + 1..dim {
                let s = a[i * dim + j] - dot(&a[i * dim..i * dim + j], &work[..j]);
                a[i * dim + j] = s / djj;
            }
        }
        Ldl { dim, l: a, d }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] -= s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s;
        }
    }
}

struct Direction {
    dx: Vec<f64>,
    /// multiplier step on every row (zero rows included)
    dz: Vec<f64>,
    ds: Vec<f64>,
    /// scaled steps `W^{-T} ds` and `W dz`
    ds_scaled: Vec<f64>,
    dz_scaled: Vec<f64>,
}

struct Factored<'a> {
    kkt: &'a Kkt<'a>,
    k: Vec<f64>,
    ldl: Ldl,
    dim: usize,
}

impl<'a> Factored<'a> {
    fn new(kkt: &'a Kkt<'a>, nt: &Nt, reg: Reg) -> Self {
        let n = kkt.problem.num_vars();
        let dim = n + kkt.p_rows;
        let k = kkt.assemble(nt);
        let mut kr = k.clone();
        let global = (0..dim).map(|i| k[i * dim + i].abs()).fold(1.0, f64::max);
        for i in 0..dim {
            let d = match reg {
                Reg::Column => k[i * dim + i].abs().max(1.0),
                Reg::Global => global,
            };
            kr[i * dim + i] += if i < n { REG * d } else { -REG * d };
        }
        let ldl = Ldl::factor(kr, dim, n);
        Factored { kkt, k, ldl, dim }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.ldl.solve_in_place(&mut x);
        for _ in 0..REFINE_STEPS {
            let mut r = rhs.to_vec();
            for i in 0..self.dim {
                r[i] -= dot(&self.k[i * self.dim..(i + 1) * self.dim], &x);
            }
            if norm_inf(&r) <= 1e-15 * (1.0 + norm_inf(rhs)) {
                break;
            }
            self.ldl.solve_in_place(&mut r);
            for (a, b) in x.iter_mut().zip(&r) {
                *a += b;
            }
        }
        x
    }

    /// Solves the linearized system
    ///
    /// ```text
    ///     P dx + M' dz = bx,   M dx + ds = bz,   W dz + W^{-T} ds = lambda \ bc
    /// ```
    ///
    /// with `ds = 0` on zero rows, refining on the unreduced equations.
    fn direction(&self, nt: &Nt, bx: &[f64], bz: &[f64], bc: &[f64]) -> Direction {
        let problem = self.kkt.problem;
        let m = &problem.constraint_matrix;
        let p = self.kkt.p_rows;
        let ldiv = nt.lambda_div(bc);
        let (mut dx, mut dz, mut ds) = self.raw_direction(nt, bx, bz, &ldiv);
        for _ in 0..REFINE_STEPS {
            let px = match &problem.quadratic {
                Some(q) => q.mul_vec(&dx),
                None => vec![0.0; dx.len()],
            };
            let mtz = m.tr_mul_vec(&dz);
            let ex: Vec<f64> = (0..dx.len()).map(|j| bx[j] - px[j] - mtz[j]).collect();
            let mdx = m.mul_vec(&dx);
            let ez: Vec<f64> = (0..ds.len()).map(|i| bz[i] - mdx[i] - ds[i]).collect();
            let wdz = nt.apply(&dz, Op::W);
            let wds = nt.apply(&ds, Op::WinvT);
            let mut ec: Vec<f64> = (0..ds.len()).map(|i| ldiv[i] - wdz[i] - wds[i]).collect();
            ec[..p].iter_mut().for_each(|x| *x = 0.0);
            let err = norm_inf(&ex).max(norm_inf(&ez)).max(norm_inf(&ec));
            let size = norm_inf(bx).max(norm_inf(bz)).max(norm_inf(&ldiv));
            if !(err > 1e-14 * size) {
                break;
            }
            let (cx, cz, cs) = self.raw_direction(nt, &ex, &ez, &ec);
            for (a, b) in dx.iter_mut().zip(&cx) {
                *a += b;
            }
            for (a, b) in dz.iter_mut().zip(&cz) {
                *a += b;
            }
            for (a, b) in ds.iter_mut().zip(&cs) {
                *a += b;
            }
        }
        let dz_scaled = nt.apply(&dz, Op::W);
        let ds_scaled = nt.apply(&ds, Op::WinvT);
        Direction { dx, dz, ds, ds_scaled, dz_scaled }
    }

    fn raw_direction(&self, nt: &Nt, bx: &[f64], bz: &[f64], ldiv: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let problem = self.kkt.problem;
        let m = &problem.constraint_matrix;
        let n = problem.num_vars();
        let p = self.kkt.p_rows;
        let rows = bz.len();
        let wt_ldiv = nt.apply(ldiv, Op::Wt);
        // u = bz - W'(lambda \ bc) on cone rows
        let mut u: Vec<f64> = (0..rows).map(|i| bz[i] - wt_ldiv[i]).collect();
        u[..p].iter_mut().for_each(|x| *x = 0.0);
        let hu = nt.apply(&nt.apply(&u, Op::WinvT), Op::Winv);
        let ghu = m.tr_mul_vec(&hu);
        let mut rhs = vec![0.0; n + p];
        for j in 0..n {
            rhs[j] = bx[j] + ghu[j];
        }
        rhs[n..].copy_from_slice(&bz[..p]);
        let sol = self.solve(&rhs);
        let dx = sol[..n].to_vec();
        let gdx = m.mul_vec(&dx);
        let mut diff: Vec<f64> = (0..rows).map(|i| gdx[i] - u[i]).collect();
        diff[..p].iter_mut().for_each(|x| *x = 0.0);
        // scaled steps first: W dz = W^{-T}(G dx - u), W^{-T} ds = lambda \ bc - W dz
        let dz_scaled = nt.apply(&diff, Op::WinvT);
        let mut dz = nt.apply(&dz_scaled, Op::Winv);
        dz[..p].copy_from_slice(&sol[n..]);
        let mut ds_scaled: Vec<f64> = (0..rows).map(|i| ldiv[i] - dz_scaled[i]).collect();
        ds_scaled[..p].iter_mut().for_each(|x| *x = 0.0);
        let ds = nt.apply(&ds_scaled, Op::Wt);
        (dx, dz, ds)
    }
}

struct Metrics {
    primal: f64,
    dual: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
    /// `Px + q + M'z`
    rx: Vec<f64>,
    /// `Mx + s - h`
    rp: Vec<f64>,
}

impl Metrics {
    fn worst(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

fn metrics(problem: &ConicProblem, x: &[f64], s: &[f64], z: &[f64]) -> Metrics {
    let m = &problem.constraint_matrix;
    let (q, h) = (&problem.objective, &problem.constraint_rhs);
    let px = match &problem.quadratic {
        Some(p) => p.mul_vec(x),
        None => vec![0.0; x.len()],
    };
    let mx = m.mul_vec(x);
    let mtz = m.tr_mul_vec(z);
    let rx: Vec<f64> = (0..x.len()).map(|j| px[j] + q[j] + mtz[j]).collect();
    let rp: Vec<f64> = (0..s.len()).map(|i| mx[i] + s[i] - h[i]).collect();
    let primal = norm_inf(&rp) / (1.0 + norm_inf(&mx).max(norm_inf(s)).max(norm_inf(h)));
    let dual = norm_inf(&rx) / (1.0 + norm_inf(&px).max(norm_inf(q)).max(norm_inf(&mtz)));
    let xpx = dot(x, &px);
    let pobj = 0.5 * xpx + dot(q, x);
    let dobj = -0.5 * xpx - dot(h, z);
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
    Metrics { primal, dual, gap, pobj, dobj, rx, rp }
}

pub(super) fn solve(problem: &ConicProblem, settings: &ConicSettings) -> Result<ConicSolution> {
    let first = solve_with(problem, settings, Reg::Column)?;
    if first.status == ConicStatus::Optimal {
        return Ok(first);
    }
    let second = solve_with(problem, settings, Reg::Global)?;
    let worst = |s: &ConicSolution| s.residuals.primal.max(s.residuals.dual).max(s.residuals.gap);
    Ok(if worst(&second) < worst(&first) { second } else { first })
}

fn solve_with(problem: &ConicProblem, settings: &ConicSettings, reg: Reg) -> Result<ConicSolution> {
    let n = problem.num_vars();
    let rows = problem.num_rows();
    let p = problem.cones.zero_dim;
    let blocks = problem.cones.blocks();
    let kkt = Kkt::new(problem, &blocks);
    let e = identity(&blocks, rows);
    let degree: f64 = blocks
        .iter()
        .map(|b| match b {
            Block::Zero(_) => 0.0,
            Block::Nonneg(r) => r.len() as f64,
            Block::Soc(_) => 1.0,
            Block::Psd(_, side) => *side as f64,
        })
        .sum();

    // least-squares start with W = I, shifted into the cone
    let (mut x, mut z, mut s) = {
        let nt = Nt::identity(&blocks, rows);
        let f = Factored::new(&kkt, &nt, reg);
        let bx: Vec<f64> = problem.objective.iter().map(|v| -v).collect();
        let mut rhs = bx.clone();
        let mut h_cone = problem.constraint_rhs.clone();
        h_cone[..p].iter_mut().for_each(|v| *v = 0.0);
        let gh = problem.constraint_matrix.tr_mul_vec(&h_cone);
        for j in 0..n {
            rhs[j] += gh[j];
        }
        rhs.extend_from_slice(&problem.constraint_rhs[..p]);
        let sol = f.solve(&rhs);
        let x = sol[..n].to_vec();
        let gx = problem.constraint_matrix.mul_vec(&x);
        let mut s: Vec<f64> = (0..rows).map(|i| problem.constraint_rhs[i] - gx[i]).collect();
        let mut z: Vec<f64> = s.iter().map(|v| -v).collect();
        s[..p].iter_mut().for_each(|v| *v = 0.0);
        z[..p].copy_from_slice(&sol[n..]);
        for v in [&mut s, &mut z] {
            let shift = cone_shift(&blocks, v)?;
            if shift >= -1e-8 * norm_inf(v).max(1.0) {
                for i in p..rows {
                    v[i] += (1.0 + shift) * e[i];
                }
            }
        }
        (x, z, s)
    };

    let target = settings.ipm_eps.min(settings.eps);
    let mut status = ConicStatus::IterLimit;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut best_mu = f64::INFINITY;
    for it in 0..settings.ipm_max_iter {
        iterations = it;
        let met = metrics(problem, &x, &s, &z);
        if !met.worst().is_finite() {
            break;
        }
        if best.as_ref().map_or(true, |b| met.worst() < b.0) {
            if best.as_ref().map_or(true, |b| met.worst() < 0.5 * b.0) {
                since_best = 0;
            }
            best = Some((met.worst(), x.clone(), s.clone(), z.clone()));
        }
        since_best += 1;
        if since_best > STALL_ITERS {
            break;
        }
        if met.worst() <= target {
            break;
        }
        let nt = match Nt::new(&blocks, &s, &z) {
            Ok(nt) => nt,
            Err(_) => break,
        };
        let f = Factored::new(&kkt, &nt, reg);
        let mu = dot(&s[p..], &z[p..]) / degree.max(1.0);
        if mu < 0.5 * best_mu {
            best_mu = mu;
            since_best = 0;
        }
        let bx: Vec<f64> = met.rx.iter().map(|v| -v).collect();
        let bz: Vec<f64> = met.rp.iter().map(|v| -v).collect();
        let ll = jordan(&blocks, &nt.lambda, &nt.lambda);

        let bc: Vec<f64> = ll.iter().map(|v| -v).collect();
        let aff = f.direction(&nt, &bx, &bz, &bc);
        let a_aff = match nt.step_to_boundary(&aff) {
            Ok(a) => a.min(1.0),
            Err(_) => break,
        };
        let sigma = (1.0 - a_aff).powi(3);

        let cross = jordan(&blocks, &aff.ds_scaled, &aff.dz_scaled);
        let bc: Vec<f64> = (0..rows).map(|i| -ll[i] - cross[i] + sigma * mu * e[i]).collect();
        let d = f.direction(&nt, &bx, &bz, &bc);
        let a_max = match nt.step_to_boundary(&d) {
            Ok(a) => a,
            Err(_) => break,
        };
        let alpha = (STEP_FRACTION * a_max).min(1.0);
        if !(alpha > MIN_STEP) {
            break;
        }
        for j in 0..n {
            x[j] += alpha * d.dx[j];
        }
        for i in 0..rows {
            z[i] += alpha * d.dz[i];
            s[i] += alpha * d.ds[i];
        }
    }

    let mut met = metrics(problem, &x, &s, &z);
    if let Some((w, bx, bs, bz)) = best {
        if !(met.worst() <= w) {
            x = bx;
            s = bs;
            z = bz;
            met = metrics(problem, &x, &s, &z);
        }
    }
    if met.worst() <= settings.eps {
        status = ConicStatus::Optimal;
    }
    Ok(ConicSolution {
        z: x,
        dual: z,
        slack: s,
        status,
        primal_obj: met.pobj,
        dual_obj: met.dobj,
        residuals: ConicResiduals { primal: met.primal, dual: met.dual, gap: met.gap },
        iterations,
    })
}
