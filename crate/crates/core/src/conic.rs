//! Conic solvers: a primal-dual interior-point method, with ADMM operator
//! splitting as the fallback and for infeasibility certificates.
//!
//! ```text
//!     min  1/2 z'Pz + q'z
//!     s.t. M z + s = r,   s in K = {0}^a x R+^b x SOC x ... x PSD x ...
//! ```
//!
//! PSD blocks use the scaled lower-triangular vectorization: columns of the
//! lower triangle in order, off-diagonal entries multiplied by sqrt(2). With
//! this inner product every cone in `K` is self-dual.
//!
//! The reported `dual` lies in `K` and satisfies `Pz + q + M'dual = 0` at
//! optimality.

mod ipm;

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, clip_reconstruct, dot, norm_inf, sym_eigen, sym_eigen_warm, Cholesky, SymMatrix};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConeSpec {
    pub zero_dim: usize,
    pub nonneg_dim: usize,
    pub soc_dims: Vec<usize>,
    pub psd_dims: Vec<usize>,
}

/// Length of the scaled vectorization of a `side x side` symmetric matrix.
pub fn svec_len(side: usize) -> usize {
    side * (side + 1) / 2
}

impl ConeSpec {
    pub fn total_dim(&self) -> usize {
        self.zero_dim
            + self.nonneg_dim
            + self.soc_dims.iter().sum::<usize>()
            + self.psd_dims.iter().map(|&s| svec_len(s)).sum::<usize>()
    }

    fn check(&self) -> Result<()> {
        if self.soc_dims.iter().any(|&d| d < 2) {
            return Err(Error::DimensionMismatch("second-order cone blocks need dimension >= 2".into()));
        }
        Ok(())
    }

    /// Contiguous row ranges of the cone blocks, in storage order.
    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut off = 0;
        if self.zero_dim > 0 {
            out.push(Block::Zero(off..off + self.zero_dim));
            off += self.zero_dim;
        }
        if self.nonneg_dim > 0 {
            out.push(Block::Nonneg(off..off + self.nonneg_dim));
            off += self.nonneg_dim;
        }
        for &d in &self.soc_dims {
            out.push(Block::Soc(off..off + d));
            off += d;
        }
        for &s in &self.psd_dims {
            let len = svec_len(s);
            out.push(Block::Psd(off..off + len, s));
            off += len;
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Block {
    Zero(Range<usize>),
    Nonneg(Range<usize>),
    Soc(Range<usize>),
    Psd(Range<usize>, usize),
}

/// Named spans of the decision vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariableLayout {
    spans: Vec<(String, Range<usize>)>,
    len: usize,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a span of `len` variables. Names must be unique.
    pub fn add(&mut self, name: &str, len: usize) -> Range<usize> {
        assert!(self.spans.iter().all(|(n, _)| n != name), "duplicate span `{name}`");
        let r = self.len..self.len + len;
        self.spans.push((name.to_string(), r.clone()));
        self.len += len;
        r
    }

    pub fn span(&self, name: &str) -> Result<Range<usize>> {
        self.spans
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::UnknownSymbol(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.spans.iter().map(|(n, _)| n.as_str())
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicates are summed; explicit zeros are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut k = 0;
        for r in 0..rows {
            while k < sorted.len() && sorted[k].0 == r {
                let c = sorted[k].1;
                assert!(c < cols, "column index out of range");
                let mut v = 0.0;
                while k < sorted.len() && sorted[k].0 == r && sorted[k].1 == c {
                    v += sorted[k].2;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        assert!(k == sorted.len(), "row index out of range");
        SparseMatrix { rows, cols, row_ptr, col_idx, values }
    }

    pub fn from_dense(m: &crate::linalg::Matrix) -> Self {
        let mut t = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &t)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * yi;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn scale(&mut self, row_scale: &[f64], col_scale: &[f64]) {
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                self.values[k] *= row_scale[i] * col_scale[self.col_idx[k]];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub objective: Vec<f64>,
    /// Optional convex quadratic term `1/2 z'Pz`.
    pub quadratic: Option<SymMatrix>,
    pub constraint_matrix: SparseMatrix,
    pub constraint_rhs: Vec<f64>,
    pub cones: ConeSpec,
    pub layout: VariableLayout,
}

impl ConicProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraint_rhs.len()
    }

    pub fn check(&self) -> Result<()> {
        self.cones.check()?;
        let n = self.num_vars();
        let m = self.num_rows();
        if self.constraint_matrix.rows() != m || self.constraint_matrix.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix is {}x{}, expected {m}x{n}",
                self.constraint_matrix.rows(),
                self.constraint_matrix.cols()
            )));
        }
        if self.cones.total_dim() != m {
            return Err(Error::DimensionMismatch(format!(
                "cone dimension {} does not match {m} rows",
                self.cones.total_dim()
            )));
        }
        if self.layout.len() != n {
            return Err(Error::DimensionMismatch("layout does not cover the decision vector".into()));
        }
        if let Some(p) = &self.quadratic {
            if p.dim() != n || !p.is_finite() {
                return Err(Error::DimensionMismatch("quadratic term has the wrong size".into()));
            }
        }
        let finite = self.constraint_matrix.is_finite()
            && self.constraint_rhs.iter().all(|v| v.is_finite())
            && self.objective.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::DegenerateInput("non-finite conic data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

/// Residuals normalized by `1 + scale` of the terms they compare.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConicResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub z: Vec<f64>,
    pub dual: Vec<f64>,
    pub slack: Vec<f64>,
    pub status: ConicStatus,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub residuals: ConicResiduals,
    pub iterations: usize,
}

impl ConicSolution {
    /// Whether `dual_obj` is a trustworthy bound: the dual residual is small.
    pub fn dual_usable(&self, eps: f64) -> bool {
        self.residuals.dual <= eps && self.dual_obj.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConicAlgorithm {
    /// Interior point, falling back to ADMM when it does not reach `eps`.
    #[default]
    InteriorPoint,
    Admm,
}

#[derive(Debug, Clone)]
pub struct ConicSettings {
    pub algorithm: ConicAlgorithm,
    /// Tolerance on the normalized primal, dual and gap residuals.
    pub eps: f64,
    /// Interior-point target; iterations continue past `eps` down to this.
    pub ipm_eps: f64,
    pub ipm_max_iter: usize,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub check_every: usize,
    pub adaptive_rho: bool,
}

impl Default for ConicSettings {
    fn default() -> Self {
        ConicSettings {
            algorithm: ConicAlgorithm::InteriorPoint,
            eps: 1e-7,
            ipm_eps: 1e-10,
            ipm_max_iter: 100,
            eps_infeasible: 1e-8,
            max_iter: 200_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            check_every: 10,
            adaptive_rho: true,
        }
    }
}

pub fn extract(sol: &ConicSolution, layout: &VariableLayout, symbol: &str) -> Result<Vec<f64>> {
    let r = layout.span(symbol)?;
    if r.end > sol.z.len() {
        return Err(Error::DimensionMismatch(format!("span `{symbol}` exceeds the solution vector")));
    }
    Ok(sol.z[r].to_vec())
}

/// Affine expression `constant + sum coef * z[index]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        AffineExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize, coef: f64) -> Self {
        AffineExpr { terms: vec![(index, coef)], constant: 0.0 }
    }

    pub fn plus(mut self, index: usize, coef: f64) -> Self {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn add(mut self, other: &AffineExpr) -> Self {
        self.terms.extend(other.terms.iter().copied());
        self.constant += other.constant;
        self
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * z[i]).sum::<f64>()
    }
}

/// Assembles a [`ConicProblem`] from cone memberships of affine expressions.
#[derive(Debug, Default)]
pub struct ConicBuilder {
    layout: VariableLayout,
    objective: Vec<f64>,
    quadratic: Vec<(usize, usize, f64)>,
    zero: Vec<AffineExpr>,
    nonneg: Vec<AffineExpr>,
    soc: Vec<Vec<AffineExpr>>,
    psd: Vec<(usize, Vec<AffineExpr>)>,
}

impl ConicBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: &str, len: usize) -> Range<usize> {
        let r = self.layout.add(name, len);
        self.objective.resize(self.layout.len(), 0.0);
        r
    }

    pub fn minimize(&mut self, index: usize, coef: f64) {
        self.objective[index] += coef;
    }

    /// Adds `coef` to `P[i][j]` and `P[j][i]` of the term `1/2 z'Pz`.
    pub fn quadratic(&mut self, i: usize, j: usize, coef: f64) {
        self.quadratic.push((i, j, coef));
    }

    pub fn zero(&mut self, e: AffineExpr) {
        self.zero.push(e);
    }

    pub fn nonneg(&mut self, e: AffineExpr) {
        self.nonneg.push(e);
    }

    /// `(t, x)` with `t >= ||x||`.
    pub fn soc(&mut self, entries: Vec<AffineExpr>) {
        assert!(entries.len() >= 2);
        self.soc.push(entries);
    }

    /// `[[p, r], [r, s]]` PSD, posed as the equivalent second-order cone
    /// `(p + s, p - s, 2r)`.
    pub fn psd2(&mut self, p: AffineExpr, r: AffineExpr, s: AffineExpr) {
        let t = p.clone().add(&s);
        let d = p.add(&s.scaled(-1.0));
        self.soc(vec![t, d, r.scaled(2.0)]);
    }

    /// Constrains the symmetric matrix with lower entries `entry(i, j)`,
    /// `i >= j`, to be PSD.
    pub fn psd(&mut self, side: usize, mut entry: impl FnMut(usize, usize) -> AffineExpr) {
        let mut v = Vec::with_capacity(svec_len(side));
        for j in 0..side {
            for i in j..side {
                let e = entry(i, j);
                v.push(if i == j { e } else { e.scaled(SQRT2) });
            }
        }
        self.psd.push((side, v));
    }

    pub fn build(self) -> ConicProblem {
        let n = self.layout.len();
        let mut rows: Vec<&AffineExpr> = Vec::new();
        rows.extend(self.zero.iter());
        rows.extend(self.nonneg.iter());
        for b in &self.soc {
            rows.extend(b.iter());
        }
        for (_, b) in &self.psd {
            rows.extend(b.iter());
        }
        let mut trip = Vec::new();
        let mut rhs = Vec::with_capacity(rows.len());
        for (r, e) in rows.iter().enumerate() {
            // s = constant + sum a z  <=>  (-a) z + s = constant
            for &(i, a) in &e.terms {
                trip.push((r, i, -a));
            }
            rhs.push(e.constant);
        }
        let quadratic = if self.quadratic.is_empty() {
            None
        } else {
            let mut p = SymMatrix::zeros(n);
            for &(i, j, c) in &self.quadratic {
                p.add_to(i, j, c);
            }
            Some(p)
        };
        ConicProblem {
            objective: self.objective,
            quadratic,
            constraint_matrix: SparseMatrix::from_triplets(rows.len(), n, &trip),
            constraint_rhs: rhs,
            cones: ConeSpec {
                zero_dim: self.zero.len(),
                nonneg_dim: self.nonneg.len(),
                soc_dims: self.soc.iter().map(|b| b.len()).collect(),
                psd_dims: self.psd.iter().map(|(s, _)| *s).collect(),
            },
            layout: self.layout,
        }
    }
}

/// Unpacks a scaled lower-triangular vector into a symmetric matrix.
pub fn svec_to_matrix(v: &[f64], side: usize) -> SymMatrix {
    let mut m = SymMatrix::zeros(side);
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            m.set(i, j, if i == j { v[k] } else { v[k] / SQRT2 });
            k += 1;
        }
    }
    m
}

pub fn matrix_to_svec(m: &SymMatrix, out: &mut [f64]) {
    let side = m.dim();
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            out[k] = if i == j { m.get(i, j) } else { m.get(i, j) * SQRT2 };
            k += 1;
        }
    }
}

fn project_soc(v: &mut [f64]) {
    let t = v[0];
    let nx = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if nx <= t {
        return;
    }
    if nx <= -t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let a = 0.5 * (nx + t);
    v[0] = a;
    let f = a / nx;
    for x in &mut v[1..] {
        *x *= f;
    }
}

/// Cone projection with per-PSD-block warm-started eigenbases.
struct Projector {
    blocks: Vec<Block>,
    bases: Vec<Vec<f64>>,
}

impl Projector {
    fn new(cones: &ConeSpec) -> Self {
        let blocks = cones.blocks();
        let bases = blocks
            .iter()
            .map(|b| match b {
                Block::Psd(_, s) => {
                    let mut id = vec![0.0; s * s];
                    for i in 0..*s {
                        id[i * s + i] = 1.0;
                    }
                    id
                }
                _ => Vec::new(),
            })
            .collect();
        Projector { blocks, bases }
    }

    fn project(&mut self, v: &mut [f64]) -> Result<()> {
        for (b, basis) in self.blocks.iter().zip(self.bases.iter_mut()) {
            match b {
                Block::Zero(r) => v[r.clone()].iter_mut().for_each(|x| *x = 0.0),
                Block::Nonneg(r) => v[r.clone()].iter_mut().for_each(|x| *x = x.max(0.0)),
                Block::Soc(r) => project_soc(&mut v[r.clone()]),
                Block::Psd(r, s) => {
                    let m = svec_to_matrix(&v[r.clone()], *s);
                    let values = match sym_eigen_warm(&m, basis) {
                        Ok(values) => values,
                        Err(_) => {
                            let dec = sym_eigen(&m)?;
                            basis.copy_from_slice(dec.vectors.as_slice());
                            dec.values
                        }
                    };
                    let p = clip_reconstruct(&m, &values, basis);
                    matrix_to_svec(&p, &mut v[r.clone()]);
                }
            }
        }
        Ok(())
    }
}

/// Distance from `v` to the cone (cold projection).
fn cone_distance(cones: &ConeSpec, v: &[f64]) -> Result<f64> {
    let mut p = v.to_vec();
    Projector::new(cones).project(&mut p)?;
    Ok(v.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

struct Scaling {
    /// column scaling D
    d: Vec<f64>,
    /// row scaling E
    e: Vec<f64>,
    /// cost scaling
    c: f64,
}

/// Ruiz equilibration of `[[P, M'], [M, 0]]`, with one scale per
/// second-order or PSD block so the cones are preserved.
fn equilibrate(
    p: &mut Option<SymMatrix>,
    q: &mut [f64],
    m: &mut SparseMatrix,
    r: &mut [f64],
    blocks: &[Block],
    iters: usize,
) -> Scaling {
    let n = q.len();
    let rows = r.len();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; rows];
    let clamp = |x: f64| if x < 1e-4 { 1.0 } else { x.min(1e4) };
    for _ in 0..iters {
        let mut col = vec![0.0f64; n];
        let mut row = vec![0.0f64; rows];
        if let Some(p) = p.as_ref() {
            for j in 0..n {
                col[j] = col[j].max(norm_inf(p.row(j)));
            }
        }
        for i in 0..rows {
            let (c, v) = m.row(i);
            for (&j, &a) in c.iter().zip(v) {
                col[j] = col[j].max(a.abs());
                row[i] = row[i].max(a.abs());
            }
        }
        let dd: Vec<f64> = col.iter().map(|&x| 1.0 / clamp(x).sqrt()).collect();
        let mut de: Vec<f64> = row.iter().map(|&x| 1.0 / clamp(x).sqrt()).collect();
        for b in blocks {
            if let Block::Soc(rg) | Block::Psd(rg, _) = b {
                let mean = de[rg.clone()].iter().sum::<f64>() / rg.len() as f64;
                de[rg.clone()].iter_mut().for_each(|x| *x = mean);
            }
        }
        m.scale(&de, &dd);
        if let Some(p) = p.as_mut() {
            *p = SymMatrix::from_lower_fn(n, |i, j| p.get(i, j) * dd[i] * dd[j]);
        }
        for j in 0..n {
            d[j] *= dd[j];
        }
        for i in 0..rows {
            e[i] *= de[i];
        }
    }
    for j in 0..n {
        q[j] *= d[j];
    }
    for i in 0..rows {
        r[i] *= e[i];
    }
    // cost scaling
    let mut pmean = 0.0;
    if let Some(p) = p.as_ref() {
        pmean = (0..n).map(|j| norm_inf(p.row(j))).sum::<f64>() / n.max(1) as f64;
    }
    let c = 1.0 / clamp(pmean.max(norm_inf(q)));
    for v in q.iter_mut() {
        *v *= c;
    }
    if let Some(p) = p.as_mut() {
        *p = p.scaled(c);
    }
    Scaling { d, e, c }
}

struct Admm<'a> {
    settings: &'a ConicSettings,
    p: Option<SymMatrix>,
    q: Vec<f64>,
    m: SparseMatrix,
    r: Vec<f64>,
    zero_rows: Vec<bool>,
    rho: f64,
    rho_vec: Vec<f64>,
    factor: Cholesky,
}

fn build_factor(p: &Option<SymMatrix>, m: &SparseMatrix, rho_vec: &[f64], sigma: f64) -> Result<Cholesky> {
    let n = m.cols();
    let mut k = match p {
        Some(p) => p.clone(),
        None => SymMatrix::zeros(n),
    };
    for j in 0..n {
        k.add_to(j, j, sigma);
    }
    // M' R M accumulated in the lower triangle, mirrored below
    let mut acc = vec![0.0; n * n];
    for i in 0..m.rows() {
        let (c, v) = m.row(i);
        let w = rho_vec[i];
        for (a, (&ja, &va)) in c.iter().zip(v).enumerate() {
            let wa = w * va;
            for (&jb, &vb) in c[..=a].iter().zip(&v[..=a]) {
                acc[ja * n + jb] += wa * vb;
            }
        }
    }
    let mut full = SymMatrix::from_lower_fn(n, |i, j| k.get(i, j) + acc[i * n + j]);
    if !full.is_finite() {
        return Err(Error::Solver("non-finite KKT matrix".into()));
    }
    // guard against exact singularity when sigma is negligible
    match cholesky(&full) {
        Ok(f) => Ok(f),
        Err(_) => {
            for j in 0..n {
                full.add_to(j, j, 1e-10 * (1.0 + full.get(j, j)));
            }
            cholesky(&full)
        }
    }
}

impl<'a> Admm<'a> {
    fn rho_vector(zero_rows: &[bool], rho: f64) -> Vec<f64> {
        zero_rows.iter().map(|&z| if z { 1e3 * rho } else { rho }).collect()
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.rho = rho;
        self.rho_vec = Self::rho_vector(&self.zero_rows, rho);
        self.factor = build_factor(&self.p, &self.m, &self.rho_vec, self.settings.sigma)?;
        Ok(())
    }

    /// One relaxed ADMM pass on the stacked state `(x, s, y)`.
    fn step(&self, proj: &mut Projector, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.q.len();
        let rows = self.r.len();
        let (x, rest) = u.split_at(n);
        let (s, y) = rest.split_at(rows);
        let alpha = self.settings.alpha;
        let sigma = self.settings.sigma;
        let w: Vec<f64> = (0..rows).map(|i| self.rho_vec[i] * (self.r[i] - s[i]) + y[i]).collect();
        let mut rhs = self.m.tr_mul_vec(&w);
        for j in 0..n {
            rhs[j] += sigma * x[j] - self.q[j];
        }
        self.factor.solve_in_place(&mut rhs);
        let xt = rhs;
        let mxt = self.m.mul_vec(&xt);
        let mut out = vec![0.0; u.len()];
        for j in 0..n {
            out[j] = alpha * xt[j] + (1.0 - alpha) * x[j];
        }
        let mut s_half = vec![0.0; rows];
        for i in 0..rows {
            s_half[i] = alpha * (self.r[i] - mxt[i]) + (1.0 - alpha) * s[i];
        }
        let mut v: Vec<f64> = (0..rows).map(|i| s_half[i] + y[i] / self.rho_vec[i]).collect();
        proj.project(&mut v)?;
        for i in 0..rows {
            out[n + rows + i] = y[i] + self.rho_vec[i] * (s_half[i] - v[i]);
        }
        out[n..n + rows].copy_from_slice(&v);
        Ok(out)
    }

    fn p_mul(&self, x: &[f64]) -> Vec<f64> {
        match &self.p {
            Some(p) => p.mul_vec(x),
            None => vec![0.0; x.len()],
        }
    }
}

pub fn solve_conic(problem: &ConicProblem, settings: &ConicSettings) -> Result<ConicSolution> {
    problem.check()?;
    if settings.algorithm == ConicAlgorithm::InteriorPoint {
        if let Ok(sol) = ipm::solve(problem, settings) {
            // a feasible pair with an open gap is kept: ADMM only adds
            // value when it can certify infeasibility or unboundedness
            let feasible = sol.residuals.primal <= settings.eps && sol.residuals.dual <= settings.eps;
            if sol.status == ConicStatus::Optimal || feasible {
                return Ok(sol);
            }
        }
    }
    solve_admm(problem, settings)
}

fn solve_admm(problem: &ConicProblem, settings: &ConicSettings) -> Result<ConicSolution> {
    let n = problem.num_vars();
    let rows = problem.num_rows();
    let blocks = problem.cones.blocks();

    let mut p = problem.quadratic.clone();
    let mut q = problem.objective.clone();
    let mut m = problem.constraint_matrix.clone();
    let mut r = problem.constraint_rhs.clone();
    let sc = equilibrate(&mut p, &mut q, &mut m, &mut r, &blocks, settings.scaling_iters);

    let mut zero_rows = vec![false; rows];
    for b in &blocks {
        if let Block::Zero(rg) = b {
            zero_rows[rg.clone()].iter_mut().for_each(|z| *z = true);
        }
    }
    let rho_vec = Admm::rho_vector(&zero_rows, settings.rho);
    let factor = build_factor(&p, &m, &rho_vec, settings.sigma)?;
    let mut admm = Admm { settings, p, q, m, r, zero_rows, rho: settings.rho, rho_vec, factor };
    let mut proj = Projector::new(&problem.cones);

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; rows];
    let mut y = vec![0.0; rows];
    let (mut x_prev, mut y_prev) = (x.clone(), y.clone());
    let check_every = settings.check_every.max(1);
    let mut u = vec![0.0; n + 2 * rows];

    let mut status = ConicStatus::IterLimit;
    let mut iterations = settings.max_iter;
    for k in 1..=settings.max_iter {
        u = admm.step(&mut proj, &u)?;
        let check = k % check_every == 0 || k == settings.max_iter;
        if k % check_every == check_every - 1 || check_every == 1 {
            x_prev.copy_from_slice(&u[..n]);
            y_prev.copy_from_slice(&u[n + rows..]);
        }
        if !check {
            continue;
        }
        x.copy_from_slice(&u[..n]);
        s.copy_from_slice(&u[n..n + rows]);
        y.copy_from_slice(&u[n + rows..]);
        let res = residuals(&admm, &sc, &x, &s, &y, problem);
        if res.converged(settings.eps) {
            status = ConicStatus::Optimal;
            iterations = k;
            break;
        }
        if certify_infeasible(problem, &sc, &admm, &y, &y_prev, settings.eps_infeasible)? {
            status = ConicStatus::Infeasible;
            iterations = k;
            break;
        }
        if certify_unbounded(problem, &sc, &admm, &x, &x_prev, settings.eps_infeasible)? {
            status = ConicStatus::Unbounded;
            iterations = k;
            break;
        }
        if settings.adaptive_rho {
            let ratio = (res.scaled_primal / res.scaled_dual.max(1e-30)).sqrt();
            let new_rho = (admm.rho * ratio).clamp(1e-6, 1e6);
            if ratio.is_finite() && (new_rho > 5.0 * admm.rho || new_rho < 0.2 * admm.rho) {
                admm.set_rho(new_rho)?;
            }
        }
    }
    x.copy_from_slice(&u[..n]);
    s.copy_from_slice(&u[n..n + rows]);
    y.copy_from_slice(&u[n + rows..]);

    let res = residuals(&admm, &sc, &x, &s, &y, problem);
    let z: Vec<f64> = (0..n).map(|j| sc.d[j] * x[j]).collect();
    let slack: Vec<f64> = (0..rows).map(|i| s[i] / sc.e[i]).collect();
    let dual: Vec<f64> = (0..rows).map(|i| -sc.e[i] * y[i] / sc.c).collect();
    Ok(ConicSolution {
        z,
        dual,
        slack,
        status,
        primal_obj: res.pobj,
        dual_obj: res.dobj,
        residuals: ConicResiduals { primal: res.primal, dual: res.dual, gap: res.gap },
        iterations,
    })
}

struct ResidualInfo {
    primal: f64,
    dual: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
    scaled_primal: f64,
    scaled_dual: f64,
}

impl ResidualInfo {
    fn converged(&self, eps: f64) -> bool {
        self.primal <= eps && self.dual <= eps && self.gap <= eps
    }
}

fn residuals(
    admm: &Admm,
    sc: &Scaling,
    x: &[f64],
    s: &[f64],
    y: &[f64],
    problem: &ConicProblem,
) -> ResidualInfo {
    let n = x.len();
    let rows = s.len();
    let mx = admm.m.mul_vec(x);
    let px = admm.p_mul(x);
    let mty = admm.m.tr_mul_vec(y);

    // scaled-space relative residuals drive the penalty adaptation
    let rp_s: Vec<f64> = (0..rows).map(|i| mx[i] + s[i] - admm.r[i]).collect();
    let rd_s: Vec<f64> = (0..n).map(|j| px[j] + admm.q[j] - mty[j]).collect();
    let scaled_primal = norm_inf(&rp_s) / norm_inf(&mx).max(norm_inf(s)).max(norm_inf(&admm.r)).max(1e-12);
    let scaled_dual = norm_inf(&rd_s) / norm_inf(&px).max(norm_inf(&admm.q)).max(norm_inf(&mty)).max(1e-12);

    // unscaled quantities
    let xu: Vec<f64> = (0..n).map(|j| sc.d[j] * x[j]).collect();
    let mxu: Vec<f64> = (0..rows).map(|i| mx[i] / sc.e[i]).collect();
    let su: Vec<f64> = (0..rows).map(|i| s[i] / sc.e[i]).collect();
    let yu: Vec<f64> = (0..rows).map(|i| sc.e[i] * y[i] / sc.c).collect();
    let pxu: Vec<f64> = (0..n).map(|j| px[j] / (sc.c * sc.d[j])).collect();
    let mtyu: Vec<f64> = (0..n).map(|j| mty[j] / (sc.c * sc.d[j])).collect();
    let b = &problem.constraint_rhs;
    let qv = &problem.objective;

    let rp: Vec<f64> = (0..rows).map(|i| mxu[i] + su[i] - b[i]).collect();
    let rd: Vec<f64> = (0..n).map(|j| pxu[j] + qv[j] - mtyu[j]).collect();
    let primal = norm_inf(&rp) / (1.0 + norm_inf(&mxu).max(norm_inf(&su)).max(norm_inf(b)));
    let dual = norm_inf(&rd) / (1.0 + norm_inf(&pxu).max(norm_inf(qv)).max(norm_inf(&mtyu)));
    let xpx = dot(&xu, &pxu);
    let pobj = 0.5 * xpx + dot(qv, &xu);
    let dobj = -0.5 * xpx + dot(b, &yu);
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
    ResidualInfo { primal, dual, gap, pobj, dobj, scaled_primal, scaled_dual }
}

/// `lambda = -dy` in the dual cone with `M'lambda = 0` and `r'lambda < 0`.
fn certify_infeasible(
    problem: &ConicProblem,
    sc: &Scaling,
    admm: &Admm,
    y: &[f64],
    y_prev: &[f64],
    eps: f64,
) -> Result<bool> {
    let rows = y.len();
    let lam: Vec<f64> = (0..rows).map(|i| -sc.e[i] * (y[i] - y_prev[i])).collect();
    let nl = norm_inf(&lam);
    if !(nl > 1e-300) {
        return Ok(false);
    }
    let rl = dot(&problem.constraint_rhs, &lam);
    if rl >= -eps * nl {
        return Ok(false);
    }
    let mtl = problem.constraint_matrix.tr_mul_vec(&lam);
    let _ = admm;
    if norm_inf(&mtl) > eps * nl {
        return Ok(false);
    }
    Ok(cone_distance(&problem.cones, &lam)? <= eps * nl)
}

/// `dx` with `P dx = 0`, `q'dx < 0` and `-M dx` in the cone.
fn certify_unbounded(
    problem: &ConicProblem,
    sc: &Scaling,
    admm: &Admm,
    x: &[f64],
    x_prev: &[f64],
    eps: f64,
) -> Result<bool> {
    let n = x.len();
    let dx: Vec<f64> = (0..n).map(|j| sc.d[j] * (x[j] - x_prev[j])).collect();
    let nd = norm_inf(&dx);
    if !(nd > 1e-300) {
        return Ok(false);
    }
    if dot(&problem.objective, &dx) >= -eps * nd {
        return Ok(false);
    }
    if let Some(p) = &problem.quadratic {
        if norm_inf(&p.mul_vec(&dx)) > eps * nd {
            return Ok(false);
        }
    }
    let _ = admm;
    let mdx: Vec<f64> = problem.constraint_matrix.mul_vec(&dx).iter().map(|v| -v).collect();
    Ok(cone_distance(&problem.cones, &mdx)? <= eps * nd)
}
