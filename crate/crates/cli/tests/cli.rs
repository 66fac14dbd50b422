use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_routepilot");

const SMALL: &str = r#"{
  "schema_version": 1,
  "tps": 2,
  "horizon_s": 4000,
  "max_retries": 1,
  "gateways": [
    {"id": "GW1", "regimes": [{"start_s": 0, "sr_percent": 80}], "init_fail_prob": 0.02},
    {"id": "GW2", "regimes": [{"start_s": 0, "sr_percent": 81}]}
  ],
  "plan": {"arms": [
    {"id": "dyn", "strategy": "dynamic", "exploration": {"mode": "derive"}},
    {"id": "rnd", "strategy": "random"}
  ]}
}"#;

fn routepilot(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ROUTEPILOT_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// `quantity,value` table as pairs.
fn table(o: &Output) -> Vec<(String, String)> {
    assert!(o.status.success(), "{}", stderr(o));
    stdout(o)
        .lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn value(rows: &[(String, String)], key: &str) -> String {
    rows.iter().find(|(k, _)| k == key).unwrap().1.clone()
}

fn scenario_file(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn optimize_two_gateways() {
    let rows = table(&routepilot(&["optimize", "--mu", "0.8,0.81", "--tps", "1", "--horizon-hours", "2"]));
    let e: f64 = value(&rows, "e_star").parse().unwrap();
    let n: u64 = value(&rows, "n_star").parse().unwrap();
    assert!((e - 0.1533).abs() <= 0.002, "{e}");
    assert!(n.abs_diff(1104) <= 15, "{n}");
    assert_eq!(value(&rows, "degenerate"), "false");
}

#[test]
fn optimize_equal_srs_is_degenerate() {
    let o = routepilot(&["optimize", "--mu", "0.5,0.5"]);
    assert_eq!(value(&table(&o), "degenerate"), "true");
    assert!(stderr(&o).contains("note:"));
}

#[test]
fn optimize_needs_two_gateways() {
    assert_eq!(routepilot(&["optimize", "--mu", "0.8"]).status.code(), Some(2));
    let o = routepilot(&["optimize", "--mu", "0.8,1.2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn optimize_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let o = routepilot(&[
        "optimize", "--mu", "0.8,0.81", "--curve-csv", csv.to_str().unwrap(), "--curve-points", "11",
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next(), Some("e,n,v"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn derive_downtime_small_sigma() {
    let rows = table(&routepilot(&["derive-downtime", "--sr1", "90", "--sr2", "60", "--sigma", "10"]));
    assert_eq!(value(&rows, "reward_factor"), "0.010000");
    assert_eq!(value(&rows, "threshold"), "0.687000");
    assert_eq!(value(&rows, "latency_guard"), "true");
    assert!(rows.iter().all(|(k, _)| k != "adjusted_reward_factor"));
}

#[test]
fn derive_downtime_guard_fails_with_slow_feedback() {
    let rows = table(&routepilot(&[
        "derive-downtime", "--sr1", "90", "--sr2", "60", "--sigma", "3", "--latency-s", "5",
    ]));
    assert_eq!(value(&rows, "reward_factor"), "0.111111");
    assert_eq!(value(&rows, "latency_guard"), "false");
    let adjusted: f64 = value(&rows, "adjusted_reward_factor").parse().unwrap();
    assert!(adjusted > 0.0 && adjusted < 0.111111);
}

#[test]
fn derive_downtime_defaults_sr2() {
    let rows = table(&routepilot(&["derive-downtime", "--sr1", "90"]));
    let sr2: f64 = value(&rows, "sr2").parse().unwrap();
    assert!(sr2 > 0.0 && sr2 < 90.0);
}

#[test]
fn derive_downtime_rejects_inverted_srs() {
    let o = routepilot(&["derive-downtime", "--sr1", "60", "--sr2", "90"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sr2 < sr1"));
}

fn simulate(scenario: &Path, out: &Path, seed: Option<&str>) -> Output {
    let mut args = vec!["simulate", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    routepilot(&args)
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = simulate(&sc, &a, Some("5"));
    let ob = simulate(&sc, &b, Some("5"));
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert_eq!(oa.stdout, ob.stdout);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
    let c = dir.path().join("c");
    assert!(simulate(&sc, &c, Some("6")).status.success());
    assert_ne!(fs::read(a.join("feedback_log.csv")).unwrap(), fs::read(c.join("feedback_log.csv")).unwrap());
}

#[test]
fn metrics_header_and_arms() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), SMALL);
    let o = simulate(&sc, &dir.path().join("out"), Some("1"));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("arm,dimension,txn_count,sr_percent,traffic_share_percent,succeeded,failed,timed_out,init_exhausted")
    );
    let arms: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms.len(), 2);
    assert!(arms.contains(&"dyn") && arms.contains(&"rnd"));
}

#[test]
fn replay_reproduces_final_scores() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(simulate(&sc, &out, Some("2")).status.success());
    let journal = dir.path().join("again.csv");
    let o = routepilot(&[
        "replay",
        "--log",
        out.join("feedback_log.csv").to_str().unwrap(),
        "--journal-out",
        journal.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(o.stdout, fs::read(out.join("final_scores.csv")).unwrap());
    assert_eq!(fs::read(journal).unwrap(), fs::read(out.join("feedback_log.csv")).unwrap());
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), SMALL);
    let run = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.args(["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        cmd.env_remove("ROUTEPILOT_SEED");
        if let Some(e) = env {
            cmd.env("ROUTEPILOT_SEED", e);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(out.join("feedback_log.csv")).unwrap()
    };
    let flag9 = run("f9", Some("9"), None);
    assert_eq!(run("e9", None, Some("9")), flag9);
    assert_eq!(run("f9e3", Some("9"), Some("3")), flag9);
    assert_eq!(run("none", None, None), run("f0", Some("0"), None));
    assert_ne!(run("e3", None, Some("3")), flag9);

    let bad = Command::new(BIN)
        .args(["simulate", "--scenario", sc.to_str().unwrap(), "--out"])
        .arg(dir.path().join("bad"))
        .env("ROUTEPILOT_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("ROUTEPILOT_SEED"));
}

#[test]
fn scenario_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), &SMALL.replace("\"tps\"", "\"tsp\""));
    let o = simulate(&sc, &dir.path().join("out"), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tsp"), "{}", stderr(&o));

    let sc = scenario_file(dir.path(), &SMALL.replace("\"sr_percent\": 81", "\"sr_percent\": 181"));
    let o = simulate(&sc, &dir.path().join("out"), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sr_percent"), "{}", stderr(&o));
}

#[test]
fn sweep_grid_flags_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), SMALL);
    let o = routepilot(&[
        "sweep", "--scenario", sc.to_str().unwrap(), "--param", "exploration",
        "--grid", "0.1,0.2", "--grid-range", "0.1:0.2:2", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_file(dir.path(), SMALL);
    let sweep = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let o = routepilot(&[
            "sweep", "--scenario", sc.to_str().unwrap(), "--param", "exploration",
            "--grid-range", "0.05:0.25:3", "--seed", "4", "--jobs", jobs, "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out.join("sweep.csv")).unwrap()
    };
    let one = sweep("one", "1");
    assert_eq!(one, sweep("three", "3"));
    assert!(one.starts_with("exploration,txn_count,"));
    assert_eq!(one.lines().count(), 4);
}
