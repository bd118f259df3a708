use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stair_core::scenario::{parse_override, ScenarioConfig};
use stair_core::sim::run_scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stair-sim"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn cfg(name: &str) -> String {
    scenarios().join(format!("{name}.cfg")).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn fig4_run_gives_five_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["run", "--config", &cfg("fig4"), "--seed", "42", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let logs: Vec<Vec<u8>> =
        (0..5).map(|i| fs::read(out.join("finality").join(format!("node-{i}.tsv"))).unwrap()).collect();
    assert!(logs.len() == 5 && logs.iter().all(|l| *l == logs[0]));
    assert!(logs[0].len() > 1000);
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), stdout(&o));
}

/// Every node of a canonical scenario must reproduce the committed log.
#[test]
fn golden_finality_logs() {
    for name in ["fig4", "cross-type", "equivocator", "checkpoint-100"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&["run", "--config", &cfg(name), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let want = fs::read(scenarios().join("golden").join(format!("{name}.tsv"))).unwrap();
        let logs: Vec<_> = fs::read_dir(dir.path().join("finality")).unwrap().map(|e| e.unwrap().path()).collect();
        assert!(logs.len() >= 5);
        for f in logs {
            assert!(fs::read(&f).unwrap() == want, "{name}: {} differs from golden", f.display());
        }
    }
}

#[test]
fn cli_matches_library() {
    let o = run(&["run", "--config", &cfg("fig4"), "--set", "max_ticks=300", "--seed", "5"]);
    let text = fs::read_to_string(cfg("fig4")).unwrap();
    let sets = vec![parse_override("max_ticks=300").unwrap(), parse_override("seed=5").unwrap()];
    let lib = run_scenario(&ScenarioConfig::from_toml(&text, &sets).unwrap().resolve().unwrap());
    assert_eq!(stdout(&o), lib.report.to_kv());
}

#[test]
fn single_node_with_k2_is_a_config_error() {
    let o = run(&["run", "--config", &cfg("fig4"), "--set", "nodes=[\"0:1000\"]"]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
}

#[test]
fn byzantine_majority_exits_3_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        &cfg("fig4"),
        "--set",
        "faults=[\"4:equivocate:0.3\"]",
        "--set",
        "max_ticks=300",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("byzantine power 2000 exceeds floor((W-1)/3) = 1000: agreement not guaranteed"));
    assert!(report.starts_with("ok=false\n"));
}

#[test]
fn sweeps() {
    let o = run(&["sweep", "--config", &cfg("fig4"), "--seeds", "0..20", "--set", "max_ticks=400"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("seed=")).count(), 20);
    assert!(out.ends_with("passed=20/20\n"));

    let mixed = run(&[
        "sweep",
        "--config",
        &cfg("equivocator"),
        "--seeds",
        "0..20",
        "--set",
        "max_ticks=300",
        "--set",
        "faults=[\"5:equivocate:0.3\", \"1:silent:100\"]",
    ]);
    assert_eq!(code(&mixed), 0, "{}", String::from_utf8_lossy(&mixed.stderr));
    assert!(stdout(&mixed).ends_with("passed=20/20\n"));

    assert_eq!(code(&run(&["sweep", "--config", &cfg("fig4"), "--seeds", "3..3"])), 2);
    assert_eq!(code(&run(&["sweep", "--config", &cfg("fig4"), "--seeds", ""])), 2);
}

#[test]
fn audit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["run", "--config", &cfg("fig4"), "--set", "max_ticks=300", "--out", d])), 0);
    let clean = run(&["audit", d]);
    assert_eq!(code(&clean), 0);
    assert!(stdout(&clean).starts_with("verdict=clean\n"));

    let log = dir.path().join("finality/node-1.tsv");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let rows: Vec<String> = lines[11..13].iter().map(|l| l.to_string()).collect();
    let swap = |l: &str, from: &str| format!("{from}\t{}", l.split_once('\t').unwrap().1);
    let (a, b) = (swap(&rows[1], rows[0].split('\t').next().unwrap()), swap(&rows[0], rows[1].split('\t').next().unwrap()));
    lines[11] = &a;
    lines[12] = &b;
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    let bad = run(&["audit", d]);
    assert_eq!(code(&bad), 4);
    assert!(stdout(&bad).contains("finding\tOrderDivergence\t1,10\t"));

    fs::remove_file(dir.path().join("dag.tsv")).unwrap();
    assert_eq!(code(&run(&["audit", d])), 2);
}

#[test]
fn validate_config_and_rewards_report() {
    let o = run(&["validate-config", "--config", &cfg("fig4")]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("node.4\trole=Validator\tpower=2000\tfault=honest"));
    assert!(stdout(&o).contains("total_power=3003"));
    assert_eq!(code(&run(&["validate-config", "--config", &cfg("fig4"), "--set", "bogus=1"])), 2);
    assert_eq!(code(&run(&["validate-config", "--config", "/nonexistent.cfg"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    run(&["run", "--config", &cfg("equivocator"), "--set", "max_ticks=300", "--out", d]);
    let r = run(&["rewards-report", d]);
    assert_eq!(code(&r), 0);
    assert!(stdout(&r).lines().all(|l| !l.contains("conserves=false")));
    assert!(stdout(&r).contains("total.SPV="));
}

#[test]
fn same_seed_same_report_bytes() {
    let a = run(&["run", "--config", &cfg("cross-type"), "--set", "max_ticks=300"]);
    let b = run(&["run", "--config", &cfg("cross-type"), "--set", "max_ticks=300"]);
    assert_eq!(a.stdout, b.stdout);
}
