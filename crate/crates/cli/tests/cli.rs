use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semicont(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semicont")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, args: &[&str], file: &str) -> String {
    let path = dir.join(file).to_string_lossy().into_owned();
    let mut all = vec!["generate"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["-o", &path]);
    let o = semicont(&all);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn generate_then_bound() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), &["mv", "--n", "8", "--k", "3", "--seed", "4"], "a.json");
    let csv = dir.path().join("b.csv");
    let o = semicont(&["bound", &p, "--deterministic", "-o", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!(value("bound_plain") <= value("bound_lcr") + 1e-6);
    assert!(!text.contains("time"));
    let rows = fs::read_to_string(csv).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.lines().nth(1).unwrap().contains(",bounds,"));
}

#[test]
fn indivisible_sections_fail() {
    let o = semicont(&["generate", "mv", "--n", "10", "--sections", "3", "-o", "/dev/null"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sections"));
}

#[test]
fn solve_writes_solution_and_maps_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), &["ssp", "--n", "7", "--k", "3", "--seed", "1"], "s.json");
    let sol = dir.path().join("sol.json");
    let mut objs = Vec::new();
    for reform in ["plain", "lcr", "pc"] {
        let o = semicont(&["solve", &p, "--reform", reform, "--gap", "1e-9", "-o", sol.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{reform}");
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sol).unwrap()).unwrap();
        let f = doc["objective"].as_f64().unwrap();
        assert!((f - doc["objective_recomputed"].as_f64().unwrap()).abs() <= 1e-8 * (1.0 + f.abs()));
        assert_eq!(doc["y"].as_array().unwrap().len(), 7);
        objs.push(f);
    }
    assert!(objs.iter().all(|f| (f - objs[0]).abs() <= 1e-6 * (1.0 + objs[0].abs())), "{objs:?}");

    let o = semicont(&["solve", &p, "--reform", "plain", "--gap", "1e-9", "--node-limit", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("node_limit"));
}

#[test]
fn infeasible_and_unreadable_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("inf.json");
    // x1 + x2 >= 5 with both upper bounds at 1
    fs::write(
        &p,
        r#"{"n":2,"m":1,"Q":[[1,0],[0,1]],"c":[0,0],"h":[0,0],"A":[[-1,-1]],"B":[[0,0]],"d":[-5],"lb":[0.1,0.1],"ub":[1,1]}"#,
    )
    .unwrap();
    let o = semicont(&["solve", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let o = semicont(&["solve", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = semicont(&["solve"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn deterministic_bench_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst");
    fs::create_dir(&inst).unwrap();
    gen(&inst, &["mv", "--n", "7", "--k", "3", "--seed", "2"], "m.json");
    gen(&inst, &["ssp", "--n", "6", "--k", "2", "--seed", "3"], "s.json");
    fs::write(inst.join("broken.json"), "{").unwrap();
    let run = |out: &str, jobs: &str| {
        let out = dir.path().join(out);
        let o = semicont(&[
            "bench",
            inst.to_str().unwrap(),
            "--deterministic",
            "--reform",
            "plain,lcr,pc",
            "--jobs",
            jobs,
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "2"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 3);
    assert!(text.lines().skip(1).all(|l| l.starts_with("1,")));
    assert_eq!(text.lines().filter(|l| l.contains(",error,")).count(), 3);
    let times: Vec<&str> = text.lines().skip(1).flat_map(|l| l.split(',').skip(8).take(4).collect::<Vec<_>>()).collect();
    assert!(times.iter().all(|t| *t == "NA"));
}
