//! Problem data for semi-continuous quadratic programs.
//!
//! ```text
//!     min  x'Qx + c'x + h'y
//!     s.t. Ax + By <= d
//!          Ex + Fy  = g                (optional)
//!          sum(y)  <= K                (optional)
//!          a_i y_i <= x_i <= b_i y_i,  y_i in {0, 1}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, min_eigenvalue, Matrix, SymMatrix, PSD_TOL};

/// Default feasibility tolerance, shared with the branch-and-bound
/// integrality tolerance.
pub const FEAS_TOL: f64 = 1e-6;

/// Equality block `E x + F y = g`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityBlock {
    pub e: Matrix,
    pub f: Matrix,
    pub g: Vec<f64>,
}

impl EqualityBlock {
    pub fn rows(&self) -> usize {
        self.g.len()
    }
}

/// Free-form annotations carried alongside an instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Constant dropped from the objective, e.g. `||b||^2` for least squares.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    pub q: SymMatrix,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub a: Matrix,
    pub b: Matrix,
    pub d: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub cardinality: Option<usize>,
    pub equality: Option<EqualityBlock>,
    pub meta: InstanceMeta,
}

/// A candidate `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SolverPoint {
    pub fn zeros(n: usize) -> Self {
        SolverPoint { x: vec![0.0; n], y: vec![0.0; n] }
    }
}

/// Linear rows over `(x, y)`: `a x + b y (<= or =) rhs`.
#[derive(Debug, Clone)]
pub struct LinearRows {
    pub a: Matrix,
    pub b: Matrix,
    pub rhs: Vec<f64>,
}

impl LinearRows {
    pub fn empty(n: usize) -> Self {
        LinearRows { a: Matrix::zeros(0, n), b: Matrix::zeros(0, n), rhs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn push(&mut self, a: &[f64], b: &[f64], rhs: f64) {
        self.a.push_row(a);
        self.b.push_row(b);
        self.rhs.push(rhs);
    }

    /// Row activity `a_k x + b_k y`.
    pub fn activity(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        dot(self.a.row(k), x) + dot(self.b.row(k), y)
    }
}

/// Structural problems found by [`validate`]. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

impl Instance {
    /// Instance with no linear rows and no cardinality limit.
    pub fn unconstrained(q: SymMatrix, c: Vec<f64>, h: Vec<f64>, lb: Vec<f64>, ub: Vec<f64>) -> Self {
        let n = q.dim();
        Instance {
            n,
            m: 0,
            q,
            c,
            h,
            a: Matrix::zeros(0, n),
            b: Matrix::zeros(0, n),
            d: Vec::new(),
            lb,
            ub,
            cardinality: None,
            equality: None,
            meta: InstanceMeta::default(),
        }
    }

    /// Appends an inequality row `a x + b y <= d`.
    pub fn push_row(&mut self, a: &[f64], b: &[f64], d: f64) {
        self.a.push_row(a);
        self.b.push_row(b);
        self.d.push(d);
        self.m += 1;
    }

    pub fn with_cardinality(mut self, k: usize) -> Self {
        self.cardinality = Some(k);
        self
    }

    pub fn equality_rows_count(&self) -> usize {
        self.equality.as_ref().map_or(0, |e| e.rows())
    }

    /// Inequality rows over `(x, y)`: `A x + B y <= d`, followed by the
    /// cardinality row when present, followed by each equality row as a
    /// `<=`/`>=` pair when `with_equality_pairs` is set.
    pub fn inequality_rows(&self, with_equality_pairs: bool) -> LinearRows {
        let n = self.n;
        let mut rows = LinearRows { a: self.a.clone(), b: self.b.clone(), rhs: self.d.clone() };
        if let Some(k) = self.cardinality {
            rows.push(&vec![0.0; n], &vec![1.0; n], k as f64);
        }
        if with_equality_pairs {
            if let Some(eq) = &self.equality {
                for k in 0..eq.rows() {
                    rows.push(eq.e.row(k), eq.f.row(k), eq.g[k]);
                    let ne: Vec<f64> = eq.e.row(k).iter().map(|v| -v).collect();
                    let nf: Vec<f64> = eq.f.row(k).iter().map(|v| -v).collect();
                    rows.push(&ne, &nf, -eq.g[k]);
                }
            }
        }
        rows
    }

    pub fn equality_rows(&self) -> LinearRows {
        match &self.equality {
            Some(eq) => LinearRows { a: eq.e.clone(), b: eq.f.clone(), rhs: eq.g.clone() },
            None => LinearRows::empty(self.n),
        }
    }

    /// The univariate illustration `f(x) = x^2 - 4x` with `y <= x <= 3y`.
    pub fn univariate_example() -> Self {
        Instance::unconstrained(SymMatrix::identity(1), vec![-4.0], vec![0.0], vec![1.0], vec![3.0])
    }
}

/// Lists every violated structural invariant.
pub fn validate(inst: &Instance) -> ValidationReport {
    let mut v = Vec::new();
    let n = inst.n;
    if n == 0 {
        v.push("n must be at least 1".to_string());
    }
    let mut dims_ok = true;
    let mut check = |ok: bool, what: &str| {
        if !ok {
            v.push(format!("dimension mismatch: {what}"));
            dims_ok = false;
        }
    };
    check(inst.q.dim() == n, "Q must be n x n");
    check(inst.c.len() == n, "c must have length n");
    check(inst.h.len() == n, "h must have length n");
    check(inst.lb.len() == n, "lb must have length n");
    check(inst.ub.len() == n, "ub must have length n");
    check(inst.a.rows() == inst.m && inst.a.cols() == n, "A must be m x n");
    check(inst.b.rows() == inst.m && inst.b.cols() == n, "B must be m x n");
    check(inst.d.len() == inst.m, "d must have length m");
    if let Some(eq) = &inst.equality {
        let r = eq.g.len();
        check(eq.e.rows() == r && eq.e.cols() == n, "E must be M x n");
        check(eq.f.rows() == r && eq.f.cols() == n, "F must be M x n");
    }
    if !dims_ok {
        return ValidationReport { violations: v };
    }

    let finite = inst.q.is_finite()
        && inst.a.is_finite()
        && inst.b.is_finite()
        && [&inst.c, &inst.h, &inst.d, &inst.lb, &inst.ub].iter().all(|x| x.iter().all(|t| t.is_finite()))
        && inst
            .equality
            .as_ref()
            .map_or(true, |eq| eq.e.is_finite() && eq.f.is_finite() && eq.g.iter().all(|t| t.is_finite()));
    if !finite {
        v.push("all entries must be finite".to_string());
        return ValidationReport { violations: v };
    }

    for i in 0..n {
        if !(inst.lb[i] < inst.ub[i]) {
            v.push(format!("a_i < b_i violated at i = {i} ({} >= {})", inst.lb[i], inst.ub[i]));
        }
    }
    match min_eigenvalue(&inst.q) {
        Ok(lmin) if lmin >= -PSD_TOL * (1.0 + inst.q.norm_inf()) => {}
        Ok(lmin) => v.push(format!("Q PSD violated: min eigenvalue {lmin:e}")),
        Err(e) => v.push(format!("Q PSD check failed: {e}")),
    }
    if let Some(k) = inst.cardinality {
        if k < 1 || k > n {
            v.push(format!("cardinality K must satisfy 1 <= K <= n (got K = {k})"));
        }
    }
    ValidationReport { violations: v }
}

fn check_point(inst: &Instance, p: &SolverPoint) -> Result<()> {
    if p.x.len() != inst.n || p.y.len() != inst.n {
        return Err(Error::DimensionMismatch(format!(
            "point has lengths ({}, {}), instance has n = {}",
            p.x.len(),
            p.y.len(),
            inst.n
        )));
    }
    Ok(())
}

/// `f(x, y) = x'Qx + c'x + h'y`.
pub fn objective(inst: &Instance, p: &SolverPoint) -> Result<f64> {
    check_point(inst, p)?;
    Ok(inst.q.quad_form(&p.x) + dot(&inst.c, &p.x) + dot(&inst.h, &p.y))
}

pub fn is_feasible(inst: &Instance, p: &SolverPoint, binary: bool, tol: f64) -> Result<bool> {
    check_point(inst, p)?;
    let (x, y) = (&p.x, &p.y);
    for k in 0..inst.m {
        if dot(inst.a.row(k), x) + dot(inst.b.row(k), y) > inst.d[k] + tol {
            return Ok(false);
        }
    }
    if let Some(eq) = &inst.equality {
        for k in 0..eq.rows() {
            if (dot(eq.e.row(k), x) + dot(eq.f.row(k), y) - eq.g[k]).abs() > tol {
                return Ok(false);
            }
        }
    }
    for i in 0..inst.n {
        if x[i] < inst.lb[i] * y[i] - tol || x[i] > inst.ub[i] * y[i] + tol {
            return Ok(false);
        }
        let ok = if binary {
            y[i].abs() <= tol || (y[i] - 1.0).abs() <= tol
        } else {
            y[i] >= -tol && y[i] <= 1.0 + tol
        };
        if !ok {
            return Ok(false);
        }
    }
    if let Some(k) = inst.cardinality {
        if y.iter().sum::<f64>() > k as f64 + tol {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Serialize, Deserialize)]
struct EqualityFile {
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    g: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    n: usize,
    m: usize,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    h: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    d: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equality: Option<EqualityFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<InstanceMeta>,
}

fn matrix_field(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<Matrix> {
    if rows.len() != nrows {
        return Err(Error::Parse {
            context: format!("field \"{name}\""),
            message: format!("expected {nrows} rows, found {}", rows.len()),
        });
    }
    Matrix::from_rows(rows, ncols).map_err(|e| Error::Parse {
        context: format!("field \"{name}\""),
        message: e.to_string(),
    })
}

/// Serializes an instance to its JSON form. Floats are written with the
/// shortest representation that parses back to the identical `f64`.
pub fn instance_to_json(inst: &Instance) -> Result<String> {
    let file = InstanceFile {
        n: inst.n,
        m: inst.m,
        q: inst.q.to_rows(),
        c: inst.c.clone(),
        h: inst.h.clone(),
        a: inst.a.to_rows(),
        b: inst.b.to_rows(),
        d: inst.d.clone(),
        lb: inst.lb.clone(),
        ub: inst.ub.clone(),
        cardinality: inst.cardinality,
        equality: inst.equality.as_ref().map(|eq| EqualityFile {
            e: eq.e.to_rows(),
            f: eq.f.to_rows(),
            g: eq.g.clone(),
        }),
        meta: if inst.meta == InstanceMeta::default() { None } else { Some(inst.meta.clone()) },
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse { context: "serialize".into(), message: e.to_string() })
}

/// Parses an instance from JSON without running [`validate`].
pub fn instance_from_json(text: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let n = file.n;
    let q = SymMatrix::from_rows(&file.q).map_err(|e| Error::Parse {
        context: "field \"Q\"".into(),
        message: e.to_string(),
    })?;
    let a = matrix_field(&file.a, file.m, n, "A")?;
    let b = matrix_field(&file.b, file.m, n, "B")?;
    let equality = match file.equality {
        Some(eq) => {
            let r = eq.g.len();
            Some(EqualityBlock {
                e: matrix_field(&eq.e, r, n, "E")?,
                f: matrix_field(&eq.f, r, n, "F")?,
                g: eq.g,
            })
        }
        None => None,
    };
    Ok(Instance {
        n,
        m: file.m,
        q,
        c: file.c,
        h: file.h,
        a,
        b,
        d: file.d,
        lb: file.lb,
        ub: file.ub,
        cardinality: file.cardinality,
        equality,
        meta: file.meta.unwrap_or_default(),
    })
}

/// Reads and validates an instance file.
pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let inst = instance_from_json(&text).map_err(|e| match e {
        Error::Parse { context, message } => {
            Error::Parse { context: format!("{}: {context}", path.display()), message }
        }
        other => other,
    })?;
    let report = validate(&inst);
    if !report.is_valid() {
        return Err(Error::InvalidInstance(report.violations.join("; ")));
    }
    Ok(inst)
}

pub fn write_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let mut text = instance_to_json(inst)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget_instance() -> Instance {
        // two assets, x1 + x2 <= 1
        let mut inst = Instance::unconstrained(
            SymMatrix::identity(2),
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.2, 0.2],
            vec![0.8, 0.8],
        );
        inst.push_row(&[1.0, 1.0], &[0.0, 0.0], 1.0);
        inst
    }

    #[test]
    fn valid_instance_has_empty_report() {
        assert!(validate(&budget_instance()).is_valid());
    }

    #[test]
    fn equal_bounds_reported() {
        let mut inst = budget_instance();
        inst.lb[0] = inst.ub[0];
        assert!(validate(&inst).mentions("a_i < b_i"));
    }

    #[test]
    fn indefinite_q_reported() {
        let mut inst = budget_instance();
        inst.q = SymMatrix::from_diag(&[1.0, -0.5]);
        assert!(validate(&inst).mentions("Q PSD"));
    }

    #[test]
    fn zero_cardinality_reported() {
        let inst = budget_instance().with_cardinality(0);
        assert!(validate(&inst).mentions("cardinality"));
    }

    #[test]
    fn feasibility_cases() {
        let inst = budget_instance();
        assert!(is_feasible(&inst, &SolverPoint::zeros(2), true, FEAS_TOL).unwrap());
        let p = SolverPoint { x: vec![0.2 - 1.0, 0.0], y: vec![1.0, 0.0] };
        assert!(!is_feasible(&inst, &p, true, FEAS_TOL).unwrap());
        // y1 = 0.5 admits x1 in [0.1, 0.4]; (a+b)/4 = 0.25 is inside
        let p = SolverPoint { x: vec![0.25, 0.0], y: vec![0.5, 0.0] };
        assert!(is_feasible(&inst, &p, false, FEAS_TOL).unwrap());
        assert!(!is_feasible(&inst, &p, true, FEAS_TOL).unwrap());
        let p = SolverPoint { x: vec![0.45, 0.0], y: vec![0.5, 0.0] };
        assert!(!is_feasible(&inst, &p, false, FEAS_TOL).unwrap());
        assert!(is_feasible(&inst, &SolverPoint::zeros(3), true, FEAS_TOL).is_err());
    }

    #[test]
    fn cardinality_enforced() {
        let inst = budget_instance().with_cardinality(1);
        let p = SolverPoint { x: vec![0.3, 0.3], y: vec![1.0, 1.0] };
        assert!(!is_feasible(&inst, &p, true, FEAS_TOL).unwrap());
    }

    #[test]
    fn objective_examples() {
        let inst = budget_instance();
        assert_eq!(objective(&inst, &SolverPoint::zeros(2)).unwrap(), 0.0);
        let p = SolverPoint { x: vec![1.0, 2.0], y: vec![0.0, 0.0] };
        assert_eq!(objective(&inst, &p).unwrap(), 5.0);
        let ex = Instance::univariate_example();
        let p = SolverPoint { x: vec![2.0], y: vec![1.0] };
        assert_eq!(objective(&ex, &p).unwrap(), -4.0);
    }

    #[test]
    fn missing_q_named_in_error() {
        let text = r#"{"n":1,"m":0,"c":[0],"h":[0],"A":[],"B":[],"d":[],"lb":[0],"ub":[1]}"#;
        let err = instance_from_json(text).unwrap_err();
        assert!(err.to_string().contains("`Q`"), "{err}");
    }

    #[test]
    fn equality_pairs_expand() {
        let mut inst = budget_instance().with_cardinality(2);
        inst.equality = Some(EqualityBlock {
            e: Matrix::zeros(1, 2),
            f: Matrix::from_rows(&[vec![1.0, 1.0]], 2).unwrap(),
            g: vec![1.0],
        });
        let rows = inst.inequality_rows(true);
        assert_eq!(rows.len(), 1 + 1 + 2);
        assert_eq!(rows.rhs, vec![1.0, 2.0, 1.0, -1.0]);
        assert_eq!(inst.inequality_rows(false).len(), 2);
    }
}
