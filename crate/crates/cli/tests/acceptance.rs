//! One line per acceptance criterion. Runs without the libtest harness so
//! the lines always print; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use routepilot_core::downtime::{
    decay_residual, derive_reward_factor, derive_threshold, detection_count, solve_decay_root,
    stationary_stats, HealthScore,
};
use routepilot_core::feedback::{FeedbackEvent, FeedbackLoop, PendingTransaction};
use routepilot_core::optimizer::{optimize_exploration, OptimizerInput};
use routepilot_core::replay::replay;
use routepilot_core::scores::{ScoreSpace, ScoreStore};
use routepilot_core::window::ScoreRule;
use routepilot_core::{
    ConfigurationId, DimensionKey, DowntimeParams, ExplorationParams, FeedbackConfig, GatewayId,
    OutcomeStatus, Timestamp, TxnId,
};
use routepilot_sim::scenario::Regime;
use routepilot_sim::sweep::argmax_share;
use routepilot_sim::{run, run_downtime_case, sweep, Manifest, RunConfig, Scenario, SweepParam};

const BIN: &str = env!("CARGO_BIN_EXE_routepilot");

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn(&mut Shared) -> Outcome);

/// Results later criteria lean on.
#[derive(Default)]
struct Shared {
    detect_seconds: Option<f64>,
    dynamic_shares: Option<(f64, f64)>,
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn scenario(name: &str) -> Scenario {
    Scenario::from_json(&fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

fn seeded(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(took: Duration, limit: Duration, detail: String) -> Outcome {
    check(took <= limit, format!("{detail}; {took:.2?} (limit {limit:?})"))
}

fn optimizer_ground_truth(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let o = Command::new(BIN)
        .args(["optimize", "--mu", "0.80,0.81", "--tps", "1", "--horizon-hours", "2"])
        .output()
        .map_err(|e| e.to_string())?;
    let took = t.elapsed();
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let get = |k: &str| -> Option<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix(k)?.strip_prefix(',')?.parse().ok())
    };
    let (Some(e), Some(n)) = (get("e_star"), get("n_star")) else {
        return Err(format!("unparseable output: {text:?}"));
    };
    let ok = o.status.success() && (e - 0.1533).abs() <= 0.002 && (n - 1104.0).abs() <= 15.0;
    within(took, Duration::from_secs(1), format!("e* {e}, n* {n}")).and_then(|d| check(ok, d))
}

fn decay_root(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let root = solve_decay_root();
    let took = t.elapsed();
    // independent route: Newton on the same condition written out here
    let f = |x: f64| (1.0 - x).ln() * (1.0 - x) / x + 0.5;
    let mut x: f64 = 0.7;
    for _ in 0..50 {
        let h = 1e-7;
        x -= f(x) / ((f(x + h) - f(x - h)) / (2.0 * h));
    }
    let half = 0.5f64.sqrt();
    let ok = (root - 0.715331863).abs() <= 1e-8
        && (root - x).abs() <= 1e-9
        && decay_residual(half).abs() > 1e-3
        && (root - half).abs() > 1e-3;
    let detail = format!(
        "root {root:.9}, newton {x:.9}, residual at sqrt(1/2) {:.4}",
        decay_residual(half)
    );
    within(took, Duration::from_millis(1), detail).and_then(|d| check(ok, d))
}

fn threshold_consistency(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut drawn) = (0.0f64, 0);
    while drawn < 100 {
        let sr1: f64 = rng.random_range(60.0..99.0);
        let sr2: f64 = rng.random_range((sr1 - 40.0).max(5.0)..sr1 - 5.0);
        let sigma: f64 = rng.random_range(2.0..5.0);
        let a = derive_reward_factor(sr1, sr2, sigma).map_err(|e| e.to_string())?;
        if a > 0.05 {
            continue;
        }
        drawn += 1;
        let p = sr1 / 100.0;
        let expected = p - sigma * (a / (2.0 - a) * p * (1.0 - p)).sqrt();
        let got = derive_threshold(sr1, sr2).map_err(|e| e.to_string())?;
        worst = worst.max(((got - expected) / expected).abs());
    }
    let took = t.elapsed();
    within(took, Duration::from_secs(1), format!("max relative gap {worst:.5} over 100 triples"))
        .and_then(|d| check(worst <= 0.01, d))
}

fn stationary_monte_carlo(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let (a, p) = (0.01, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut h = HealthScore::with_value(p, Timestamp(0));
    let (mut sum, mut sum2) = (0.0, 0.0);
    let steps = 1_000_000;
    for _ in 0..steps {
        h.penalize(a);
        if rng.random::<f64>() < p {
            h.reward(a);
        }
        sum += h.value;
        sum2 += h.value * h.value;
    }
    let took = t.elapsed();
    let mean = sum / steps as f64;
    let std = (sum2 / steps as f64 - mean * mean).sqrt();
    let closed = (a / (2.0 - a) * p * (1.0 - p)).sqrt();
    let (m2, s2) = stationary_stats(90.0, a).map_err(|e| e.to_string())?;
    let ok = (mean - 0.9).abs() <= 0.001
        && ((std - closed) / closed).abs() <= 0.05
        && (m2 - p).abs() < 1e-12
        && (s2 - closed).abs() < 1e-12;
    within(
        took,
        Duration::from_secs(10),
        format!("mean {mean:.5}, std {std:.5} vs {closed:.5}"),
    )
    .and_then(|d| check(ok, d))
}

fn detection_latency(shared: &mut Shared) -> Outcome {
    let t = Instant::now();
    let s = scenario("downtime_drop.json");
    let base = s.seed.unwrap_or(0);
    let (mut txns, mut secs, mut spurious, mut missed) = (Vec::new(), Vec::new(), 0, 0);
    for i in 0..200 {
        let case = run_downtime_case(&s, base + i).map_err(|e| e.to_string())?;
        let arm = &case.arms[0];
        spurious += arm.spurious;
        match (arm.txns_to_detect, arm.seconds_to_detect) {
            (Some(n), Some(x)) => {
                txns.push(n as f64);
                secs.push(x);
            }
            _ => {
                missed += 1;
                txns.push(f64::INFINITY);
                secs.push(f64::INFINITY);
            }
        }
    }
    let took = t.elapsed();
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[99] + v[100]) / 2.0
    };
    let (m, ms) = (median(&mut txns), median(&mut secs));
    shared.detect_seconds = Some(ms);
    let tc = detection_count(90.0, 60.0, 3.0).map_err(|e| e.to_string())?;
    let ok = m >= 0.5 * tc && m <= 2.0 * tc;
    within(
        took,
        Duration::from_secs(30),
        format!(
            "median {m} txns ({ms:.1} s) vs t_c {tc:.2}, band [{:.2}, {:.2}]; {missed} missed, {spurious} spurious",
            0.5 * tc,
            2.0 * tc
        ),
    )
    .and_then(|d| check(ok, d))
}

fn bandit_value(shared: &mut Shared) -> Outcome {
    let t = Instant::now();
    let dynamic = scenario("two_gateways.json");
    let random = scenario("two_gateways_random.json");
    let seed = dynamic.seed.unwrap_or(0);
    let d = run(&dynamic, &seeded(seed)).map_err(|e| e.to_string())?.metrics;
    let r = run(&random, &seeded(seed)).map_err(|e| e.to_string())?.metrics;
    let took = t.elapsed();
    let (ds, rs) = (d.overall_sr().unwrap_or(0.0), r.overall_sr().unwrap_or(0.0));
    let arm = &d.arms[0];
    shared.dynamic_shares = Some((arm.share("GW1"), arm.share("GW2")));
    let ok = d.txns() >= 100_000
        && (0.805..=0.811).contains(&ds)
        && ds > rs
        && (rs - 0.805).abs() <= 0.004
        && d.conserved()
        && r.conserved();
    within(
        took,
        Duration::from_secs(60),
        format!("dynamic {ds:.5} vs random {rs:.5} over {} txns each", d.txns()),
    )
    .and_then(|d| check(ok, d))
}

fn sweep_agreement(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut s = scenario("two_gateways.json");
    s.horizon_s = 2_000_000.0;
    let grid: Vec<f64> = (0..20).map(|i| 0.02 + 0.43 * i as f64 / 19.0).collect();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = sweep(&s, SweepParam::Exploration, &grid, s.seed.unwrap_or(0), jobs, 1)
        .map_err(|e| e.to_string())?;
    let took = t.elapsed();
    let input = OptimizerInput::new(vec![0.80, 0.81], s.arm_tps(), Duration::from_secs(7200))
        .map_err(|e| e.to_string())?;
    let analytic = optimize_exploration(&input).e_star;
    let best = argmax_share(&rows).ok_or("empty sweep")?;
    within(
        took,
        Duration::from_secs(300),
        format!("empirical argmax {best:.4} vs analytic {analytic:.4} (20 points, {} txns each)", rows[0].txns),
    )
    .and_then(|d| check((best - analytic).abs() <= 0.05, d))
}

#[derive(Clone, Debug)]
enum Op {
    Initiate(usize, bool),
    Feedback(usize, bool),
    Tick,
}

fn interleaving() -> impl Strategy<Value = Vec<(u64, Op)>> {
    let op = prop_oneof![
        1 => (0..5usize, any::<bool>()).prop_map(|(t, x)| Op::Initiate(t, x)),
        2 => (0..5usize, any::<bool>()).prop_map(|(t, s)| Op::Feedback(t, s)),
        1 => Just(Op::Tick),
    ];
    prop::collection::vec((prop_oneof![0..5u64, 85..100u64], op), 1..30)
}

fn fresh_loop() -> FeedbackLoop {
    let mut store = ScoreStore::new();
    store.insert(
        ConfigurationId::new("A").unwrap(),
        ScoreSpace::new(
            Some(ExplorationParams::new(0.1, 1000, Duration::from_secs(86_400)).unwrap()),
            Some(DowntimeParams::new(0.05, 1e-9, 3.0, Duration::from_secs(60)).unwrap()),
            ScoreRule::default(),
        ),
    );
    FeedbackLoop::new(FeedbackConfig::default(), store)
}

fn settles_once(script: Vec<(u64, Op)>) -> Result<(), TestCaseError> {
    let mut f = fresh_loop();
    let (config, dim, gw) = (
        ConfigurationId::new("A").unwrap(),
        DimensionKey::global(),
        GatewayId::new("G").unwrap(),
    );
    let mut started = [false; 5];
    let mut sr: BTreeMap<String, u32> = BTreeMap::new();
    let mut rewards: BTreeMap<String, u32> = BTreeMap::new();
    let mut now = 0;
    for (step, op) in script {
        now += step * 1000;
        let at = Timestamp(now);
        match op {
            Op::Initiate(t, explored) if !started[t] => {
                started[t] = true;
                let p = PendingTransaction::new(
                    TxnId::new(format!("t{t}")).unwrap(),
                    gw.clone(),
                    dim.clone(),
                    config.clone(),
                    explored,
                    at,
                    f.config(),
                );
                f.register_initiation(p).unwrap();
            }
            Op::Initiate(..) => {}
            Op::Feedback(t, success) => {
                let kind = if success {
                    OutcomeStatus::Success
                } else {
                    OutcomeStatus::Failure
                };
                let txn = TxnId::new(format!("t{t}")).unwrap();
                let a = f.submit_feedback(&FeedbackEvent { txn, kind, at }).unwrap();
                *sr.entry(format!("t{t}")).or_default() += u32::from(a.sr_record.is_some());
                *rewards.entry(format!("t{t}")).or_default() += u32::from(a.health_reward);
            }
            Op::Tick => {
                for txn in f.apply_timeouts(at).unwrap().default_penalized {
                    *sr.entry(txn.to_string()).or_default() += 1;
                }
            }
        }
    }
    for (txn, n) in sr.iter().chain(rewards.iter()) {
        prop_assert!(*n <= 1, "{} settled {} times", txn, n);
    }
    Ok(())
}

fn score_bits(rows: &[routepilot_core::scores::FinalScore]) -> Vec<(u64, Option<u64>)> {
    rows.iter()
        .map(|r| (r.sr_score.to_bits(), r.health.map(f64::to_bits)))
        .collect()
}

fn exactly_once(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        ..Config::default()
    });
    runner
        .run(&interleaving(), settles_once)
        .map_err(|e| format!("interleaving: {e}"))?;

    let mut replayed = 0;
    for name in ["regime_flips.json", "downtime_drop.json"] {
        let mut s = scenario(name);
        s.horizon_s = s.horizon_s.min(20_000.0);
        let seed = s.seed.unwrap_or(0);
        let cfg = RunConfig {
            seed,
            journal: true,
            watch: None,
        };
        let out = run(&s, &cfg).map_err(|e| e.to_string())?;
        let manifest = Manifest::new(&s, seed, vec![], &out, vec![]);
        let manifest = Manifest::from_json(&manifest.to_json()).map_err(|e| e.to_string())?;
        let mut fl = manifest.feedback_loop().map_err(|e| e.to_string())?;
        let journal = out.journal.as_deref().unwrap_or_default();
        replay(journal, &mut fl).map_err(|e| e.to_string())?;
        let again = fl.store().final_scores(manifest.end().max(fl.clock()));
        if score_bits(&again) != score_bits(&out.final_scores) {
            return Err(format!("{name}: replayed final scores differ"));
        }
        replayed += journal.len();
    }
    Ok(format!(
        "{cases} interleavings settle at most once; {replayed} journal rows replay bit-exactly; {:.2?}",
        t.elapsed()
    ))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut small = scenario("regime_flips.json");
    small.horizon_s = 30_000.0;
    let sc = tmp.path().join("flips.json");
    fs::write(&sc, serde_json::to_string(&small).unwrap()).unwrap();
    let invoke = |args: &[&str], out: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let o = Command::new(BIN)
            .args(args)
            .arg("--out")
            .arg(out)
            .env_remove("ROUTEPILOT_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        Ok(files(out))
    };
    let sc = sc.to_str().unwrap();
    let sim = ["simulate", "--scenario", sc];
    let swp = ["sweep", "--scenario", sc, "--param", "exploration", "--grid", "0.05,0.15,0.3"];
    let drop = scenario_path("downtime_drop.json");
    let sig = ["sweep", "--scenario", drop.to_str().unwrap(), "--param", "sigma", "--grid", "3,4", "--replicates", "5"];
    let mut compared = 0;
    for (i, args) in [&sim[..], &swp[..], &sig[..]].into_iter().enumerate() {
        let a = invoke(args, &tmp.path().join(format!("{i}a")))?;
        let b = invoke(args, &tmp.path().join(format!("{i}b")))?;
        if a != b {
            return Err(format!("`{}` outputs differ between invocations", args.join(" ")));
        }
        compared += a.len();
    }
    Ok(format!("{compared} output files byte-identical across repeat invocations; {:.2?}", t.elapsed()))
}

/// Single-arm copy of the flips scenario with GW1/GW2 trading 81 %/80 %.
fn flipping(arm: &str, horizon_s: f64) -> Scenario {
    let mut s = scenario("regime_flips.json");
    s.horizon_s = horizon_s;
    s.plan.arms.retain(|a| a.id == arm);
    let hours = [4.0, 6.0, 2.0, 5.0, 3.0, 6.0, 2.0, 4.0];
    for (g, model) in s.gateways.iter_mut().enumerate() {
        model.regimes.clear();
        let (mut t, mut i) = (0.0, 0);
        while t < horizon_s {
            let good = (i + g) % 2 == 0;
            model.regimes.push(Regime {
                start_s: t,
                sr_percent: if good { 81.0 } else { 80.0 },
            });
            t += hours[i % hours.len()] * 3600.0;
            i += 1;
        }
    }
    s
}

fn desk_scale(shared: &mut Shared) -> Outcome {
    println!(
        "  not reproducible at desk scale: the production figures (1.15 % cumulative SR lift, \
         per-dimension lifts, production traffic splits, 21-day UPI curves, the $15,000 GMV \
         downtime event) need live merchant traffic; checked below are the qualitative stand-ins"
    );
    let t = Instant::now();
    let sr = |arm: &str| -> Result<f64, String> {
        let s = flipping(arm, 1_000_000.0);
        s.validate().map_err(|e| e.to_string())?;
        Ok(run(&s, &seeded(2)).map_err(|e| e.to_string())?.metrics.overall_sr().unwrap_or(0.0))
    };
    let (dynamic, rule) = (sr("dynamic")?, sr("rule-based")?);
    let (g1, g2) = shared.dynamic_shares.ok_or("criterion 6 did not record shares")?;
    let secs = shared.detect_seconds.ok_or("criterion 5 did not record detection time")?;
    let ok = dynamic >= rule && g1 > 0.0 && g2 > g1 && secs < 60.0;
    check(
        ok,
        format!(
            "regime flips: dynamic {dynamic:.5} >= rule-based {rule:.5}; shares GW1 {g1:.3} / GW2 {g2:.3}; \
             median detection {secs:.1} virtual s; {:.2?}",
            t.elapsed()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "optimizer ground truth", optimizer_ground_truth),
        (2, "decay root", decay_root),
        (3, "threshold consistency", threshold_consistency),
        (4, "stationary score Monte Carlo", stationary_monte_carlo),
        (5, "detection latency", detection_latency),
        (6, "bandit value", bandit_value),
        (7, "sweep argmax vs analytic e*", sweep_agreement),
        (8, "exactly-once feedback and replay", exactly_once),
        (9, "determinism", determinism),
        (10, "desk-scale substitutes", desk_scale),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut shared = Shared::default();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.is_some_and(|o| o != n && !(o == 10 && (n == 5 || n == 6))) {
            continue;
        }
        let (tag, detail) = match f(&mut shared) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} [{tag}] {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
