//! Seeded instance generators.
//!
//! All randomness flows from one `SplitMix64` stream per instance, so a seed
//! reproduces an instance bit for bit.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::model::{validate, EqualityBlock, Instance, InstanceMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Mv,
    Ssp,
}

/// Strength of the diagonal added to the mean-variance covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dominance {
    Minus,
    #[default]
    Zero,
    Plus,
}

impl Dominance {
    pub fn delta(self) -> f64 {
        match self {
            Dominance::Minus => 0.1,
            Dominance::Zero => 1.0,
            Dominance::Plus => 10.0,
        }
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mv" => Ok(Family::Mv),
            "ssp" => Ok(Family::Ssp),
            _ => Err(Error::InvalidSpec(format!("unknown family `{s}` (expected mv or ssp)"))),
        }
    }
}

impl FromStr for Dominance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minus" | "-" => Ok(Dominance::Minus),
            "zero" | "0" => Ok(Dominance::Zero),
            "plus" | "+" => Ok(Dominance::Plus),
            _ => Err(Error::InvalidSpec(format!("unknown dominance `{s}` (expected minus, zero or plus)"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Mv => "mv",
            Family::Ssp => "ssp",
        })
    }
}

impl fmt::Display for Dominance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dominance::Minus => "minus",
            Dominance::Zero => "zero",
            Dominance::Plus => "plus",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub family: Family,
    pub n: usize,
    pub k: Option<usize>,
    pub dominance: Dominance,
    pub sections: Option<usize>,
    pub seed: u64,
}

impl GenSpec {
    pub fn mv(n: usize, k: usize, dominance: Dominance, seed: u64) -> Self {
        GenSpec { family: Family::Mv, n, k: Some(k), dominance, sections: None, seed }
    }

    pub fn ssp(n: usize, k: usize, seed: u64) -> Self {
        GenSpec { family: Family::Ssp, n, k: Some(k), dominance: Dominance::Zero, sections: None, seed }
    }

    pub fn with_sections(mut self, sections: usize) -> Self {
        self.sections = Some(sections);
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("n = {} must be at least 2", self.n)));
        }
        if let Some(k) = self.k {
            if k > self.n {
                return Err(Error::InvalidSpec(format!("K = {k} exceeds n = {}", self.n)));
            }
        }
        if let Some(s) = self.sections {
            if s == 0 || self.n % s != 0 {
                return Err(Error::IndivisibleSections { n: self.n, sections: s });
            }
        }
        Ok(())
    }

    /// File-name friendly identifier.
    pub fn name(&self) -> String {
        let mut s = format!("{}-n{}", self.family, self.n);
        if let Some(k) = self.k {
            s += &format!("-k{k}");
        }
        if self.family == Family::Mv {
            s += &format!("-{}", self.dominance);
        }
        if let Some(sec) = self.sections {
            s += &format!("-s{sec}");
        }
        s + &format!("-seed{}", self.seed)
    }
}

fn normal(rng: &mut SplitMix64) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// `C'C` for an `rows x cols` standard normal `C`.
fn gram(rng: &mut SplitMix64, rows: usize, cols: usize) -> (Matrix, SymMatrix) {
    let c = Matrix::from_fn(rows, cols, |_, _| normal(rng));
    let g = SymMatrix::from_lower_fn(cols, |i, j| (0..rows).map(|r| c.get(r, i) * c.get(r, j)).sum());
    (c, g)
}

/// Cardinality-constrained mean-variance model with buy-in thresholds:
///
/// ```text
///     min x'Qx  s.t.  e'x = 1,  mu'x >= target,  e'y <= K,
///                     0.05 y_i <= x_i <= 0.6 y_i
/// ```
pub fn gen_mv(spec: &GenSpec) -> Result<Instance> {
    spec.check()?;
    let n = spec.n;
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let (_, g) = gram(&mut rng, n, n);
    let scale = n as f64 / g.trace();
    let delta = spec.dominance.delta();
    let diag: Vec<f64> = (0..n).map(|_| delta * rng.gen::<f64>()).collect();
    let q = SymMatrix::from_lower_fn(n, |i, j| scale * g.get(i, j) + if i == j { diag[i] } else { 0.0 });
    let mu: Vec<f64> = (0..n).map(|_| uniform(&mut rng, 0.002, 0.01)).collect();
    let mut sorted = mu.clone();
    sorted.sort_by(f64::total_cmp);
    let target = sorted[(0.3 * (n - 1) as f64).round() as usize];

    let mut inst = Instance::unconstrained(q, vec![0.0; n], vec![0.0; n], vec![0.05; n], vec![0.6; n]);
    let zeros = vec![0.0; n];
    inst.push_row(&vec![1.0; n], &zeros, 1.0);
    inst.push_row(&vec![-1.0; n], &zeros, -1.0);
    let neg_mu: Vec<f64> = mu.iter().map(|v| -v).collect();
    inst.push_row(&neg_mu, &zeros, -target);
    inst.cardinality = spec.k;
    inst.meta = InstanceMeta { name: Some(spec.name()), objective_constant: None };
    finish(inst, spec)
}

/// Best subset selection `min ||Dx - r||^2` with `|supp x| <= K`, stored
/// without the constant `||r||^2` (kept in the metadata).
pub fn gen_ssp(spec: &GenSpec) -> Result<Instance> {
    spec.check()?;
    let n = spec.n;
    let rows = 2 * n;
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let (d, q) = gram(&mut rng, rows, n);
    let beta: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
    let mut r = d.mul_vec(&beta);
    for v in r.iter_mut() {
        *v += normal(&mut rng);
    }
    let c: Vec<f64> = d.tr_mul_vec(&r).iter().map(|v| -2.0 * v).collect();
    let mut inst = Instance::unconstrained(q, c, vec![0.0; n], vec![-100.0; n], vec![100.0; n]);
    inst.cardinality = spec.k;
    inst.meta = InstanceMeta { name: Some(spec.name()), objective_constant: Some(r.iter().map(|v| v * v).sum()) };
    finish(inst, spec)
}

pub fn generate(spec: &GenSpec) -> Result<Instance> {
    match spec.family {
        Family::Mv => gen_mv(spec),
        Family::Ssp => gen_ssp(spec),
    }
}

fn finish(inst: Instance, spec: &GenSpec) -> Result<Instance> {
    let inst = match spec.sections {
        Some(s) => add_sections(&inst, s)?,
        None => inst,
    };
    let report = validate(&inst);
    if !report.is_valid() {
        return Err(Error::InvalidInstance(report.violations.join("; ")));
    }
    Ok(inst)
}

/// Splits the variables into `sections` consecutive groups and requires
/// exactly one active variable per group. Drops the cardinality limit.
pub fn add_sections(inst: &Instance, sections: usize) -> Result<Instance> {
    let n = inst.n;
    if sections == 0 || n % sections != 0 {
        return Err(Error::IndivisibleSections { n, sections });
    }
    let size = n / sections;
    let f = Matrix::from_fn(sections, n, |s, i| if i / size == s { 1.0 } else { 0.0 });
    let mut out = inst.clone();
    out.equality = Some(EqualityBlock { e: Matrix::zeros(sections, n), f, g: vec![1.0; sections] });
    out.cardinality = None;
    Ok(out)
}
