use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semicont::bnb::{SolveSettings, SolveStatus};
use semicont::conic::ConicSettings;
use semicont::generators::{generate, Dominance, Family, GenSpec};
use semicont::model::{objective, read_instance, validate, write_instance, Instance, SolverPoint};
use semicont::reformulate::{bound_compare, BoundOptions, RhoChoice};
use semicont::report::{group_means, run_instance, solve_reform, to_csv, Reform, RunOptions, RunRecord};
use semicont::Error;

const EXIT_ERROR: u8 = 1;
const EXIT_LIMIT: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "semicont", version, about = "Bounds and branch-and-bound for semi-continuous quadratic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance as JSON.
    Generate(GenerateArgs),
    /// Compare the continuous relaxation bounds of an instance.
    Bound(BoundArgs),
    /// Solve an instance to optimality with one reformulation.
    Solve(SolveArgs),
    /// Run every instance in a directory and write one CSV row per reformulation.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Mv,
    Ssp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DominanceArg {
    Minus,
    Zero,
    Plus,
}

#[derive(Clone, Copy, ValueEnum)]
enum RhoArg {
    Optimal,
    Simple,
    Mineig,
    Zero,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReformArg {
    Plain,
    Lcr,
    Pc,
    Qcr,
}

impl From<ReformArg> for Reform {
    fn from(r: ReformArg) -> Self {
        match r {
            ReformArg::Plain => Reform::Plain,
            ReformArg::Lcr => Reform::Lcr,
            ReformArg::Pc => Reform::Pc,
            ReformArg::Qcr => Reform::Qcr,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    family: FamilyArg,
    #[arg(long)]
    n: usize,
    /// Cardinality limit; defaults to n / 2.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "zero")]
    dominance: DominanceArg,
    /// Split the budget into this many equal sections (adds an equality block).
    #[arg(long)]
    sections: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to `<name>.json` in the current directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConicArgs {
    /// Residual tolerance of the conic solver.
    #[arg(long, default_value_t = 1e-7)]
    conic_eps: f64,
    /// Iteration cap of the first-order conic fallback.
    #[arg(long, default_value_t = 200_000)]
    conic_max_iter: usize,
    #[arg(long, value_enum, default_value = "optimal")]
    rho: RhoArg,
}

impl ConicArgs {
    fn bound_options(&self, qcr: bool) -> BoundOptions {
        let conic = ConicSettings { eps: self.conic_eps, max_iter: self.conic_max_iter, ..ConicSettings::default() };
        let rho = match self.rho {
            RhoArg::Optimal => RhoChoice::Optimal,
            RhoArg::Simple => RhoChoice::Simple,
            RhoArg::Mineig => RhoChoice::MinEig,
            RhoArg::Zero => RhoChoice::Zero,
        };
        BoundOptions { conic, rho, qcr, opt: None }
    }
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Relative optimality gap at which the search stops.
    #[arg(long, default_value_t = 1e-4)]
    gap: f64,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Single worker, fixed node order, and `NA` for every timing.
    #[arg(long)]
    deterministic: bool,
}

impl SearchArgs {
    fn settings(&self) -> SolveSettings {
        SolveSettings {
            rel_gap: self.gap,
            time_limit: self.time_limit.unwrap_or(f64::INFINITY),
            node_limit: self.node_limit.unwrap_or(usize::MAX),
            threads: self.threads.max(1),
            deterministic: self.deterministic,
            ..SolveSettings::default()
        }
    }
}

#[derive(Args)]
struct BoundArgs {
    file: PathBuf,
    /// Also solve the SDP behind the QCR bound (needs an equality block).
    #[arg(long)]
    qcr: bool,
    /// Solve the instance with lcr branch-and-bound so `impr` can be reported.
    #[arg(long)]
    with_opt: bool,
    #[command(flatten)]
    conic: ConicArgs,
    /// Write the bounds as a one-row CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct SolveArgs {
    file: PathBuf,
    #[arg(long, value_enum, default_value = "lcr")]
    reform: ReformArg,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    conic: ConicArgs,
    /// Write the solution as JSON.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    dir: PathBuf,
    /// Comma-separated reformulations to run on each instance.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "plain,lcr,pc")]
    reform: Vec<ReformArg>,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    conic: ConicArgs,
    /// Append one mean row per instance group and reformulation.
    #[arg(long)]
    averages: bool,
    /// Instances solved concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn instance_name(inst: &Instance, path: &Path) -> String {
    inst.meta
        .name
        .clone()
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn load(path: &Path) -> Result<Instance, Error> {
    let inst = read_instance(path)?;
    let report = validate(&inst);
    if !report.is_valid() {
        return Err(Error::InvalidInstance(report.violations.join("; ")));
    }
    Ok(inst)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v.filter(|x| x.is_finite()) {
        Some(x) => x.to_string(),
        None => "NA".into(),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<u8, Error> {
    let family = match a.family {
        FamilyArg::Mv => Family::Mv,
        FamilyArg::Ssp => Family::Ssp,
    };
    let dominance = match a.dominance {
        DominanceArg::Minus => Dominance::Minus,
        DominanceArg::Zero => Dominance::Zero,
        DominanceArg::Plus => Dominance::Plus,
    };
    let spec = GenSpec { family, n: a.n, k: Some(a.k.unwrap_or(a.n / 2).max(1)), dominance, sections: a.sections, seed: a.seed };
    let inst = generate(&spec)?;
    let path = a.output.unwrap_or_else(|| PathBuf::from(format!("{}.json", spec.name())));
    write_instance(&inst, &path)?;
    let report = validate(&inst);
    println!("{}", path.display());
    println!(
        "n = {}, linear rows = {}, cardinality = {}, equality rows = {}, valid = {}",
        inst.n,
        inst.m,
        inst.cardinality.map_or("none".into(), |k| k.to_string()),
        inst.equality.as_ref().map_or(0, |e| e.rows()),
        report.is_valid()
    );
    for v in &report.violations {
        println!("  {v}");
    }
    Ok(0)
}

fn cmd_bound(a: BoundArgs) -> Result<u8, Error> {
    let inst = load(&a.file)?;
    let name = instance_name(&inst, &a.file);
    let mut opts = a.conic.bound_options(a.qcr);
    if a.with_opt {
        let pre = bound_compare(&inst, &BoundOptions { qcr: false, ..opts.clone() });
        let settings = SolveSettings { rel_gap: 1e-9, ..SolveSettings::default() };
        let out = solve_reform(&inst, Reform::Lcr, &pre, &settings)?;
        opts.opt = out.objective;
    }
    let r = bound_compare(&inst, &opts);
    println!("instance     {name}");
    println!("bound_plain  {}", fmt_opt(Some(r.bound_plain)));
    println!("bound_pr     {}", fmt_opt(Some(r.bound_pr)));
    println!("bound_lcr    {}", fmt_opt(Some(r.bound_lcr)));
    println!("bound_qcr    {}", fmt_opt(r.bound_qcr));
    println!("opt          {}", fmt_opt(r.opt));
    println!("impr         {}", fmt_opt(r.impr));
    if !a.deterministic {
        let t = &r.timings;
        println!("time         plain {:.3}s, sdp_l {:.3}s, socp {:.3}s, sdp_a {:.3}s", t.plain, t.sdp_l, t.socp, t.sdp_a);
    }
    for n in &r.notes {
        println!("note         {n}");
    }
    if let Some(path) = a.output {
        fs::write(path, to_csv(&[RunRecord::from_bounds(&name, &r, a.deterministic)]))?;
    }
    Ok(0)
}

fn exit_for(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal | SolveStatus::GapReached => 0,
        SolveStatus::TimeLimit | SolveStatus::NodeLimit => EXIT_LIMIT,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
    }
}

fn cmd_solve(a: SolveArgs) -> Result<u8, Error> {
    let inst = load(&a.file)?;
    let reform = Reform::from(a.reform);
    let bounds = bound_compare(&inst, &a.conic.bound_options(reform == Reform::Qcr));
    let out = match solve_reform(&inst, reform, &bounds, &a.search.settings()) {
        Err(Error::Infeasible) => {
            println!("status       infeasible");
            return Ok(EXIT_INFEASIBLE);
        }
        r => r?,
    };
    let s = &out.stats;
    println!("reformulation {reform}");
    println!("status       {}", s.status);
    println!("objective    {}", fmt_opt(out.objective));
    println!("root_bound   {}", fmt_opt(Some(s.root_bound)));
    println!("best_bound   {}", fmt_opt(Some(s.best_bound)));
    println!("gap          {}", fmt_opt(Some(s.final_gap)));
    println!("nodes        {}", s.nodes_explored);
    println!("cuts         {}", s.cuts_added);
    if !a.search.deterministic {
        println!("time         {:.3}s", s.wall_time);
    }
    if let Some(p) = &out.point {
        println!("support      {:?}", p.y.iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(i, _)| i).collect::<Vec<_>>());
    }
    if let Some(path) = a.output {
        let check = out.point.as_ref().map(|p: &SolverPoint| objective(&inst, p)).transpose()?;
        let doc = serde_json::json!({
            "instance": instance_name(&inst, &a.file),
            "reformulation": reform.to_string(),
            "status": s.status.to_string(),
            "objective": out.objective,
            "objective_recomputed": check,
            "x": out.point.as_ref().map(|p| &p.x),
            "y": out.point.as_ref().map(|p| &p.y),
            "root_bound": Some(s.root_bound).filter(|v| v.is_finite()),
            "best_bound": Some(s.best_bound).filter(|v| v.is_finite()),
            "gap": Some(s.final_gap).filter(|v| v.is_finite()),
            "nodes": s.nodes_explored,
            "cuts": s.cuts_added,
        });
        fs::write(path, serde_json::to_string_pretty(&doc).map_err(|e| Error::Solver(e.to_string()))? + "\n")?;
    }
    Ok(exit_for(s.status))
}

fn bench_rows(path: &Path, reforms: &[Reform], opts: &RunOptions) -> Vec<RunRecord> {
    match load(path) {
        Ok(inst) => run_instance(&instance_name(&inst, path), &inst, reforms, opts),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            reforms.iter().map(|r| RunRecord::failed(&name, &r.to_string(), "error")).collect()
        }
    }
}

fn cmd_bench(a: BenchArgs) -> Result<u8, Error> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidSpec(format!("no .json instances in {}", a.dir.display())));
    }
    let mut reforms: Vec<Reform> = Vec::new();
    for r in a.reform.iter().map(|&r| Reform::from(r)) {
        if !reforms.contains(&r) {
            reforms.push(r);
        }
    }
    let opts = RunOptions {
        bounds: a.conic.bound_options(reforms.contains(&Reform::Qcr)),
        solve: a.search.settings(),
        deterministic: a.search.deterministic,
    };
    let jobs = a.jobs.max(1).min(files.len());
    let mut per_file: Vec<Vec<RunRecord>> = vec![Vec::new(); files.len()];
    std::thread::scope(|scope| {
        let chunks: Vec<_> = per_file.chunks_mut(files.len().div_ceil(jobs)).zip(files.chunks(files.len().div_ceil(jobs))).collect();
        for (out, paths) in chunks {
            let (reforms, opts) = (&reforms, &opts);
            scope.spawn(move || {
                for (slot, p) in out.iter_mut().zip(paths) {
                    *slot = bench_rows(p, reforms, opts);
                }
            });
        }
    });
    let mut records: Vec<RunRecord> = per_file.into_iter().flatten().collect();
    if a.averages {
        let means = group_means(&records);
        records.extend(means);
    }
    let csv = to_csv(&records);
    match a.output {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Error::Infeasible) => {
            eprintln!("error: problem is infeasible");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
