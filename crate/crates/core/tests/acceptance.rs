//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::conic_qp::{as_conic, assert_conic_certificate, random_qp};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use semicont::bnb::{enumerate_oracle, solve_miqp, solve_pc, SolveOutcome, SolveSettings};
use semicont::conic::{extract, solve_conic, ConicSettings, ConicStatus};
use semicont::generators::{generate, Dominance, GenSpec};
use semicont::linalg::{min_eigenvalue, SymMatrix};
use semicont::model::{objective, Instance};
use semicont::qp::{solve_qp, QpStatus};
use semicont::reformulate::{
    bound_compare, build_lcr, build_plain, build_rho_sdp, lift_params_to_rho, lifted_value, perspective_value,
    plain_value, relaxation_bound, BoundOptions, BoundReport, LiftParams,
};
use semicont::report::{run_instance, to_csv, Reform, RunOptions};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-12)
}

fn name(inst: &Instance) -> String {
    inst.meta.name.clone().unwrap_or_default()
}

struct BoundRun {
    inst: Instance,
    report: BoundReport,
}

fn fifty_bounds() -> (Vec<BoundRun>, f64) {
    let t = Instant::now();
    let runs = common::mixed_instances(50, 6, 15, 1000)
        .into_iter()
        .map(|inst| {
            let report = bound_compare(&inst, &BoundOptions { qcr: false, ..BoundOptions::default() });
            BoundRun { inst, report }
        })
        .collect();
    (runs, t.elapsed().as_secs_f64())
}

fn lcr_equals_pr(runs: &[BoundRun], secs: f64) -> Verdict {
    let mut worst = 0.0f64;
    for r in runs {
        let b = &r.report;
        let d = (b.bound_lcr - b.bound_pr).abs() / (1.0 + b.bound_pr.abs());
        worst = worst.max(d);
        ensure(d <= 1e-5, format!("{}: lcr {} vs pr {} ({:?})", name(&r.inst), b.bound_lcr, b.bound_pr, b.notes))?;
    }
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!("{} instances, worst scaled gap {worst:.2e}, {secs:.1}s", runs.len()))
}

fn bound_chain(runs: &[BoundRun]) -> Verdict {
    for r in runs {
        let b = &r.report;
        let (_, opt) = enumerate_oracle(&r.inst).map_err(|e| e.to_string())?;
        ensure(b.bound_plain <= b.bound_lcr + 1e-6, format!("{}: plain {} > lcr {}", name(&r.inst), b.bound_plain, b.bound_lcr))?;
        ensure(b.bound_lcr <= opt + 1e-6, format!("{}: lcr {} > opt {opt}", name(&r.inst), b.bound_lcr))?;
    }
    Ok(format!("plain <= lcr <= opt on {} instances", runs.len()))
}

fn zero_lift() -> Verdict {
    let mut rng = SplitMix64::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for inst in common::mixed_instances(20, 6, 12, 2000) {
        let lp = common::random_feasible_lift(&inst, &mut rng);
        let model = build_lcr(&inst, &lp).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let p = common::binary_feasible_point(&inst, &mut rng);
            let f = objective(&inst, &p).map_err(|e| e.to_string())?;
            for g in [lifted_value(&inst, &lp, &p.x, &p.y), model.objective(&model.embed(&inst, &p))] {
                let d = (g - f).abs() / (1.0 + f.abs());
                worst = worst.max(d);
                ensure(d <= 1e-9, format!("{}: lifted {g} vs {f}", name(&inst)))?;
            }
            count += 1;
        }
    }
    Ok(format!("{count} points, worst scaled difference {worst:.2e}"))
}

fn lift_maps_to_rho(runs: &[BoundRun]) -> Verdict {
    let mut rng = SplitMix64::seed_from_u64(4);
    let mut points = 0;
    let mut worst = f64::INFINITY;
    for r in runs {
        let lp: &LiftParams = r.report.lift.as_ref().ok_or(format!("{}: no lift", name(&r.inst)))?;
        let bar = lift_params_to_rho(lp);
        let q = &r.inst.q;
        ensure(bar.rho.iter().all(|&v| v >= -1e-8), format!("{}: negative rho", name(&r.inst)))?;
        let lam = min_eigenvalue(&q.minus_diag(&bar.rho)).map_err(|e| e.to_string())?;
        ensure(lam >= -1e-7 * (1.0 + q.norm_inf()), format!("{}: min eig {lam:e}", name(&r.inst)))?;
        let mut here = 0;
        while here < 200 {
            let Some(p) = common::relaxed_point(&r.inst, 1e-3, &mut rng) else { continue };
            let d = perspective_value(&r.inst, &bar.rho, &p.x, &p.y) - lifted_value(&r.inst, lp, &p.x, &p.y);
            worst = worst.min(d);
            ensure(d >= -1e-8, format!("{}: f_rho - f_uv = {d:e}", name(&r.inst)))?;
            here += 1;
        }
        points += here;
    }
    Ok(format!("{points} points, smallest f_rho - f_uv {worst:.2e}"))
}

struct Solved {
    pc: SolveOutcome,
    pc_root: f64,
    plain_root: f64,
}

fn solver_correctness() -> (Verdict, Vec<Solved>) {
    let t = Instant::now();
    let settings = SolveSettings::default();
    let mut solved = Vec::new();
    let res = (|| {
        for inst in common::mixed_instances(30, 6, 12, 3000) {
            let (_, opt) = enumerate_oracle(&inst).map_err(|e| e.to_string())?;
            let b = bound_compare(&inst, &BoundOptions { qcr: false, ..BoundOptions::default() });
            let lift = b.lift.as_ref().ok_or("no lift")?;
            let rho = b.rho.as_ref().ok_or("no rho")?;
            let plain = solve_miqp(&build_plain(&inst), &settings).map_err(|e| e.to_string())?;
            let lcr = solve_miqp(&build_lcr(&inst, lift).map_err(|e| e.to_string())?, &settings).map_err(|e| e.to_string())?;
            let pc = solve_pc(&inst, rho, &settings).map_err(|e| e.to_string())?;
            for (what, out) in [("plain", &plain), ("lcr", &lcr), ("pc", &pc)] {
                let v = out.objective.ok_or(format!("{what}: no incumbent"))?;
                ensure(rel_close(v, opt, 1e-6), format!("{} {what}: {v} vs oracle {opt}", name(&inst)))?;
            }
            let plain_root = relaxation_bound(&build_plain(&inst)).map_err(|e| e.to_string())?;
            solved.push(Solved { pc_root: pc.stats.root_bound, pc, plain_root });
        }
        let secs = t.elapsed().as_secs_f64();
        ensure(secs < 600.0, format!("took {secs:.1}s"))?;
        Ok(format!("30 instances x 3 reformulations match the oracle, {secs:.1}s"))
    })();
    (res, solved)
}

fn cuts_valid(solved: &[Solved]) -> Verdict {
    ensure(!solved.is_empty(), "no solves to inspect")?;
    let mut cuts = 0;
    for s in solved {
        let z = s.pc.z.as_ref().ok_or("no incumbent")?;
        for c in &s.pc.cuts {
            ensure(c.violation(z) <= 1e-8, format!("cut violated by {:e}", c.violation(z)))?;
            cuts += 1;
        }
        ensure(s.pc_root >= s.plain_root - 1e-8, format!("pc root {} < plain root {}", s.pc_root, s.plain_root))?;
    }
    Ok(format!("{cuts} cuts over {} solves hold at the incumbent", solved.len()))
}

fn qcr_dominates() -> Verdict {
    let doms = [Dominance::Minus, Dominance::Zero, Dominance::Plus];
    let mut imprs = Vec::new();
    for seed in 0..10u64 {
        let spec = GenSpec::mv(30, 10, doms[seed as usize % 3], 4000 + seed).with_sections(10);
        let inst = generate(&spec).map_err(|e| e.to_string())?;
        let b = bound_compare(&inst, &BoundOptions::default());
        let q = b.bound_qcr.ok_or(format!("{}: no qcr bound ({:?})", name(&inst), b.notes))?;
        ensure(q >= b.bound_lcr - 1e-6, format!("{}: qcr {q} < lcr {}", name(&inst), b.bound_lcr))?;
        let lift = b.lift.as_ref().ok_or("no lift")?;
        let out = solve_miqp(&build_lcr(&inst, lift).map_err(|e| e.to_string())?, &SolveSettings::default())
            .map_err(|e| e.to_string())?;
        let opt = out.objective.ok_or("no incumbent")?;
        let impr = semicont::reformulate::improvement(q, b.bound_lcr, opt).ok_or("improvement undefined")?;
        imprs.push(impr);
    }
    let mean = imprs.iter().sum::<f64>() / imprs.len() as f64;
    ensure(mean > 0.0, format!("mean improvement {mean}"))?;
    Ok(format!("qcr >= lcr on 10 instances, mean improvement {:.1}%", 100.0 * mean))
}

fn univariate_grid() -> Verdict {
    let inst = Instance::univariate_example();
    let lp = LiftParams { u: vec![-1.0], v: vec![1.0] };
    let mut lo = f64::INFINITY;
    let mut hi = f64::INFINITY;
    let mut inside = 0;
    for i in 0..21 {
        for j in 0..21 {
            let x = 3.0 * i as f64 / 20.0;
            let y = (j + 1) as f64 / 21.0;
            // the ordering is claimed on the feasible region y <= x <= 3y only
            if x < y || x > 3.0 * y {
                continue;
            }
            inside += 1;
            let f = plain_value(&inst, &[x], &[y]);
            let fuv = lifted_value(&inst, &lp, &[x], &[y]);
            let fp = perspective_value(&inst, &[1.0], &[x], &[y]);
            lo = lo.min(fuv - f);
            hi = hi.min(fp - fuv);
            ensure(fuv - f >= -1e-10 && fp - fuv >= -1e-10, format!("({x}, {y}): f {f} f_uv {fuv} f_p {fp}"))?;
        }
    }
    Ok(format!("{inside} grid points in the region, margins {lo:.2e} and {hi:.2e}"))
}

fn cross_validation() -> Verdict {
    let mut rng = SplitMix64::seed_from_u64(9);
    let settings = ConicSettings::default();
    for case in 0..100 {
        let p = random_qp(&mut rng);
        let q = solve_qp(&p).map_err(|e| e.to_string())?;
        ensure(q.status == QpStatus::Optimal, format!("qp {case}: {:?}", q.status))?;
        let cp = as_conic(&p);
        let c = solve_conic(&cp, &settings).map_err(|e| e.to_string())?;
        ensure(c.status == ConicStatus::Optimal, format!("conic {case}: {:?}", c.status))?;
        assert_conic_certificate(&cp, &c, settings.eps);
        let fc = p.objective(&extract(&c, &cp.layout, "z").map_err(|e| e.to_string())?);
        ensure((q.obj - fc).abs() <= 1e-6 * (1.0 + q.obj.abs()), format!("case {case}: qp {} conic {fc}", q.obj))?;
    }
    for case in 0..20 {
        let n = rng.gen_range(1..=12);
        let d: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..5.0) }).collect();
        let p = build_rho_sdp(&SymMatrix::from_diag(&d));
        let s = solve_conic(&p, &settings).map_err(|e| e.to_string())?;
        let rho = extract(&s, &p.layout, "rho").map_err(|e| e.to_string())?;
        for i in 0..n {
            ensure((rho[i] - d[i].max(0.0)).abs() <= 1e-5, format!("sdp {case}: rho {} for q {}", rho[i], d[i]))?;
        }
    }
    Ok("100 QPs and 20 diagonal SDPs agree".into())
}

fn deterministic_csv() -> Verdict {
    // QCR needs an equality block, so only the sectioned instance runs it
    let insts = [
        ("mv-sections", generate(&GenSpec::mv(6, 3, Dominance::Zero, 5).with_sections(3)), &Reform::ALL[..]),
        ("mv", generate(&GenSpec::mv(8, 3, Dominance::Minus, 6)), &Reform::ALL[..3]),
        ("ssp", generate(&GenSpec::ssp(8, 3, 7)), &Reform::ALL[..3]),
    ];
    let opts = RunOptions { deterministic: true, ..RunOptions::default() };
    let run = || {
        let mut recs = Vec::new();
        for (n, inst, reforms) in &insts {
            let inst = inst.as_ref().map_err(|e| e.to_string())?;
            recs.extend(run_instance(n, inst, reforms, &opts));
        }
        Ok::<_, String>(to_csv(&recs))
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, "CSV differs between runs")?;
    ensure(!a.contains(",error,"), "a run ended with an error status")?;
    Ok(format!("{} identical bytes over two runs", a.len()))
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let t = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = std::thread::scope(|s| {
        let bounds = s.spawn(|| {
            let (runs, secs) = fifty_bounds();
            vec![
                (1, "LCR bound equals the perspective relaxation", guarded(|| lcr_equals_pr(&runs, secs))),
                (2, "plain <= LCR <= optimum", guarded(|| bound_chain(&runs))),
                (4, "recovered lift maps to a dominating rho", guarded(|| lift_maps_to_rho(&runs))),
            ]
        });
        let solves = s.spawn(|| {
            let (v, solved) = solver_correctness();
            vec![
                (5, "B&B matches enumeration", v),
                (6, "perspective cuts valid, PC root dominates", guarded(|| cuts_valid(&solved))),
            ]
        });
        let qcr = s.spawn(|| vec![(7, "SDP_a bound dominates on sectioned MV", guarded(qcr_dominates))]);
        let rest = s.spawn(|| {
            vec![
                (3, "lift is zero at binary-feasible points", guarded(zero_lift)),
                (8, "example grid ordering f <= f_uv <= f_p", guarded(univariate_grid)),
                (9, "QP and conic solvers agree", guarded(cross_validation)),
                (10, "deterministic CSV is byte-identical", guarded(deterministic_csv)),
            ]
        });
        [bounds, solves, qcr, rest]
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_else(|_| vec![(0, "worker", Err("worker panicked".into()))]))
            .collect()
    });
    results.sort_by_key(|r| r.0);
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (k, what, v) in &results {
        let (tag, detail) = match v {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(out, "{tag} criterion {k:>2}: {what}: {detail}").unwrap();
    }
    writeln!(out, "{} of {} criteria passed in {:.1}s", results.len() - failed, results.len(), t.elapsed().as_secs_f64())
        .unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
