//! Per-instance runs across reformulations, and their CSV rendering.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::bnb::{solve_miqp, solve_pc, SolveOutcome, SolveSettings, SolveStatus};
use crate::error::{Error, Result};
use crate::model::Instance;
use crate::reformulate::{bound_compare, build_lcr, build_plain, build_qcr, improvement, BoundOptions, BoundReport};

/// Bumped whenever columns change.
pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "schema_version,instance,reformulation,bound_plain,bound_pr,bound_lcr,bound_qcr,impr,\
time_sdp_l,time_socp,time_sdp_a,time_bnb,nodes,cuts,gap,status,objective";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reform {
    Plain,
    Lcr,
    Pc,
    Qcr,
}

impl Reform {
    pub const ALL: [Reform; 4] = [Reform::Plain, Reform::Lcr, Reform::Pc, Reform::Qcr];
}

impl FromStr for Reform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Reform::Plain),
            "lcr" => Ok(Reform::Lcr),
            "pc" => Ok(Reform::Pc),
            "qcr" => Ok(Reform::Qcr),
            _ => Err(Error::InvalidSpec(format!("unknown reformulation `{s}` (expected plain, lcr, pc or qcr)"))),
        }
    }
}

impl fmt::Display for Reform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reform::Plain => "plain",
            Reform::Lcr => "lcr",
            Reform::Pc => "pc",
            Reform::Qcr => "qcr",
        })
    }
}

/// One CSV row. `None` renders as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub instance: String,
    pub reformulation: String,
    pub bound_plain: Option<f64>,
    pub bound_pr: Option<f64>,
    pub bound_lcr: Option<f64>,
    pub bound_qcr: Option<f64>,
    pub impr: Option<f64>,
    pub time_sdp_l: Option<f64>,
    pub time_socp: Option<f64>,
    pub time_sdp_a: Option<f64>,
    pub time_bnb: Option<f64>,
    pub nodes: Option<usize>,
    pub cuts: Option<usize>,
    pub gap: Option<f64>,
    pub status: String,
    pub objective: Option<f64>,
}

fn cell<T: fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "NA".into(),
    }
}

fn num(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl RunRecord {
    fn empty(instance: &str, reformulation: &str) -> Self {
        RunRecord {
            instance: instance.into(),
            reformulation: reformulation.into(),
            bound_plain: None,
            bound_pr: None,
            bound_lcr: None,
            bound_qcr: None,
            impr: None,
            time_sdp_l: None,
            time_socp: None,
            time_sdp_a: None,
            time_bnb: None,
            nodes: None,
            cuts: None,
            gap: None,
            status: "NA".into(),
            objective: None,
        }
    }

    /// A row for a run that failed before producing any numbers.
    pub fn failed(instance: &str, reformulation: &str, status: &str) -> Self {
        let mut rec = RunRecord::empty(instance, reformulation);
        rec.status = status.into();
        rec
    }

    /// Bound columns only.
    pub fn from_bounds(instance: &str, r: &BoundReport, deterministic: bool) -> Self {
        let mut rec = RunRecord::empty(instance, "bounds");
        rec.fill_bounds(r);
        if !deterministic {
            rec.time_sdp_l = Some(r.timings.sdp_l);
            rec.time_socp = Some(r.timings.socp);
            rec.time_sdp_a = r.bound_qcr.map(|_| r.timings.sdp_a);
        }
        rec
    }

    fn fill_bounds(&mut self, r: &BoundReport) {
        self.bound_plain = num(Some(r.bound_plain));
        self.bound_pr = num(Some(r.bound_pr));
        self.bound_lcr = num(Some(r.bound_lcr));
        self.bound_qcr = num(r.bound_qcr);
        self.impr = num(r.impr);
    }

    pub fn to_csv_row(&self) -> String {
        [
            SCHEMA_VERSION.to_string(),
            quote(&self.instance),
            quote(&self.reformulation),
            cell(&self.bound_plain),
            cell(&self.bound_pr),
            cell(&self.bound_lcr),
            cell(&self.bound_qcr),
            cell(&self.impr),
            cell(&self.time_sdp_l),
            cell(&self.time_socp),
            cell(&self.time_sdp_a),
            cell(&self.time_bnb),
            cell(&self.nodes),
            cell(&self.cuts),
            cell(&self.gap),
            quote(&self.status),
            cell(&self.objective),
        ]
        .join(",")
    }
}

pub fn to_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s += &r.to_csv_row();
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub bounds: BoundOptions,
    pub solve: SolveSettings,
    /// Report every time column as `NA` so output is reproducible.
    pub deterministic: bool,
}

/// Outcome of one reformulation solve.
#[derive(Debug)]
pub struct ReformRun {
    pub reform: Reform,
    pub outcome: Result<SolveOutcome>,
}

/// Solves `inst` with one reformulation, reusing the parameters in `bounds`.
pub fn solve_reform(inst: &Instance, reform: Reform, bounds: &BoundReport, settings: &SolveSettings) -> Result<SolveOutcome> {
    let missing = |what: &str| Error::Solver(format!("{what} unavailable: {}", bounds.notes.join("; ")));
    match reform {
        Reform::Plain => solve_miqp(&build_plain(inst), settings),
        Reform::Lcr => {
            let lift = bounds.lift.as_ref().ok_or_else(|| missing("lift parameters"))?;
            solve_miqp(&build_lcr(inst, lift)?, settings)
        }
        Reform::Pc => {
            let rho = bounds.rho.as_ref().ok_or_else(|| missing("perspective parameters"))?;
            solve_pc(inst, rho, settings)
        }
        Reform::Qcr => {
            let q = bounds.qcr_params.as_ref().ok_or_else(|| missing("QCR parameters"))?;
            solve_miqp(&build_qcr(inst, q)?, settings)
        }
    }
}

pub fn status_label(r: &Result<SolveOutcome>) -> String {
    match r {
        Ok(o) => o.stats.status.to_string(),
        Err(Error::Infeasible) => SolveStatus::Infeasible.to_string(),
        Err(_) => "error".into(),
    }
}

/// Bounds once, then one solve per reformulation; one record per solve.
pub fn run_instance(name: &str, inst: &Instance, reforms: &[Reform], opts: &RunOptions) -> Vec<RunRecord> {
    let mut bopts = opts.bounds.clone();
    bopts.qcr = bopts.qcr || reforms.contains(&Reform::Qcr);
    let mut report = bound_compare(inst, &bopts);
    let runs: Vec<(ReformRun, f64)> = reforms
        .iter()
        .map(|&reform| {
            let t = Instant::now();
            let outcome = solve_reform(inst, reform, &report, &opts.solve);
            (ReformRun { reform, outcome }, t.elapsed().as_secs_f64())
        })
        .collect();
    if report.opt.is_none() {
        report.opt = runs.iter().find_map(|(r, _)| match &r.outcome {
            Ok(o) if o.stats.status == SolveStatus::Optimal => o.objective,
            _ => None,
        });
    }
    if let (Some(q), Some(opt)) = (report.bound_qcr, report.opt) {
        let base = if report.bound_lcr.is_finite() { report.bound_lcr } else { report.bound_pr };
        report.impr = improvement(q, base, opt);
    }
    runs.into_iter()
        .map(|(run, elapsed)| {
            let mut rec = RunRecord::empty(name, &run.reform.to_string());
            rec.fill_bounds(&report);
            rec.status = status_label(&run.outcome);
            if let Ok(o) = &run.outcome {
                rec.nodes = Some(o.stats.nodes_explored);
                rec.cuts = Some(o.stats.cuts_added);
                rec.gap = num(Some(o.stats.final_gap));
                rec.objective = o.objective;
            }
            if !opts.deterministic {
                let t = &report.timings;
                rec.time_bnb = Some(elapsed);
                match run.reform {
                    Reform::Plain => {}
                    Reform::Lcr => {
                        rec.time_sdp_l = Some(t.sdp_l);
                        rec.time_socp = Some(t.socp);
                    }
                    Reform::Pc => rec.time_sdp_l = Some(t.sdp_l),
                    Reform::Qcr => rec.time_sdp_a = Some(t.sdp_a),
                }
            }
            rec
        })
        .collect()
}

/// Means of the numeric columns per `(group, reformulation)`, where the
/// group is the instance name with its trailing `-seed<k>` removed.
pub fn group_means(records: &[RunRecord]) -> Vec<RunRecord> {
    let group = |name: &str| match name.rfind("-seed") {
        Some(i) => name[..i].to_string(),
        None => name.to_string(),
    };
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let k = (group(&r.instance), r.reformulation.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(g, reform)| {
            let rows: Vec<&RunRecord> =
                records.iter().filter(|r| group(&r.instance) == g && r.reformulation == reform).collect();
            let mean = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<f64> {
                let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                if v.len() == rows.len() && !v.is_empty() {
                    Some(v.iter().sum::<f64>() / v.len() as f64)
                } else {
                    None
                }
            };
            let mut m = RunRecord::empty(&format!("mean({g})"), &reform);
            m.bound_plain = mean(&|r| r.bound_plain);
            m.bound_pr = mean(&|r| r.bound_pr);
            m.bound_lcr = mean(&|r| r.bound_lcr);
            m.bound_qcr = mean(&|r| r.bound_qcr);
            m.impr = mean(&|r| r.impr);
            m.time_sdp_l = mean(&|r| r.time_sdp_l);
            m.time_socp = mean(&|r| r.time_socp);
            m.time_sdp_a = mean(&|r| r.time_sdp_a);
            m.time_bnb = mean(&|r| r.time_bnb);
            m.gap = mean(&|r| r.gap);
            m.objective = mean(&|r| r.objective);
            let nodes = mean(&|r| r.nodes.map(|n| n as f64));
            m.nodes = nodes.map(|n| n.round() as usize);
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reform_round_trip() {
        for r in Reform::ALL {
            assert_eq!(r.to_string().parse::<Reform>().unwrap(), r);
        }
        assert!("socp".parse::<Reform>().is_err());
    }

    #[test]
    fn csv_cells() {
        let mut r = RunRecord::empty("a,b", "plain");
        r.nodes = Some(3);
        r.objective = Some(-0.5);
        let row = r.to_csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count() + 1);
        assert!(row.starts_with("1,\"a,b\",plain,NA,"));
        assert!(row.ends_with(",3,NA,NA,NA,-0.5"));
        assert!(to_csv(&[r]).starts_with(CSV_HEADER));
    }

    #[test]
    fn means_group_by_seed() {
        let mut a = RunRecord::empty("mv-n6-seed1", "lcr");
        a.nodes = Some(2);
        a.objective = Some(1.0);
        let mut b = RunRecord::empty("mv-n6-seed2", "lcr");
        b.nodes = Some(4);
        b.objective = Some(3.0);
        let m = group_means(&[a, b]);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].instance, "mean(mv-n6)");
        assert_eq!(m[0].nodes, Some(3));
        assert_eq!(m[0].objective, Some(2.0));
        assert_eq!(m[0].bound_plain, None);
    }
}
