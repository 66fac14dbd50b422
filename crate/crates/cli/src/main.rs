//! `routepilot`: derivations, simulations, sweeps and journal replay.
//!
//! Numbers are printed with six decimals. Seeds resolve as `--seed`, then
//! the scenario's `seed`, then `ROUTEPILOT_SEED`, then 0.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use routepilot_core::downtime::{default_sr2, DowntimeDerivation, DowntimeInput, RootVariant};
use routepilot_core::experiments::fmt6;
use routepilot_core::optimizer::{optimize_exploration, volume_curve, OptimizerInput};
use routepilot_core::replay::{read_journal, replay, write_journal};
use routepilot_sim::manifest::ARTIFACT_VERSION;
use routepilot_sim::metrics::write_final_scores_csv;
use routepilot_sim::scenario::SCHEMA_VERSION;
use routepilot_sim::sweep::write_sweep_csv;
use routepilot_sim::{run, sweep, Manifest, RunConfig, Scenario, SweepParam};

const SEED_ENV: &str = "ROUTEPILOT_SEED";

#[derive(Parser)]
#[command(name = "routepilot", version, about = "Closed-loop payment routing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal exploration factor and window size for a set of gateway SRs.
    Optimize(OptimizeArgs),
    /// Health-score parameters for a downtime scenario.
    DeriveDowntime(DowntimeArgs),
    /// Run one scenario and write its reports.
    Simulate(SimulateArgs),
    /// Run a scenario once per grid point.
    Sweep(SweepArgs),
    /// Rebuild scores from a feedback journal and print them.
    Replay(ReplayArgs),
}

#[derive(Clone)]
struct MuList(Vec<f64>);

fn mu_list(s: &str) -> Result<MuList, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() < 2 {
        return Err("need at least two comma-separated SRs".into());
    }
    Ok(MuList(v))
}

#[derive(Args)]
struct OptimizeArgs {
    /// Long-term gateway SRs as fractions, comma separated.
    #[arg(long, value_parser = mu_list)]
    mu: MuList,
    #[arg(long, default_value_t = 1.0)]
    tps: f64,
    #[arg(long, default_value_t = 2.0)]
    horizon_hours: f64,
    /// Also write `(e, V(e))` samples here.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 200, requires = "curve_csv")]
    curve_points: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Published,
    ExactRoot,
}

#[derive(Args)]
struct DowntimeArgs {
    /// Normal SR, percent.
    #[arg(long)]
    sr1: f64,
    /// Degraded SR to detect, percent. Defaults to max(sr1 - 30, 5).
    #[arg(long)]
    sr2: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    tps: f64,
    /// Average success feedback latency.
    #[arg(long, default_value_t = 0.0)]
    latency_s: f64,
    #[arg(long, value_enum, default_value_t = Variant::Published)]
    variant: Variant,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Exploration,
    Sigma,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    param: Param,
    /// Grid values, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "grid_range", conflicts_with = "grid_range")]
    grid: Vec<f64>,
    /// Evenly spaced grid `start:end:count`, both ends included.
    #[arg(long)]
    grid_range: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Runs per grid point, seeded `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    /// Grid points run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// feedback_log.csv written by `simulate`.
    #[arg(long)]
    log: PathBuf,
    /// Defaults to manifest.json next to the log.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write the rebuilt journal here for comparison.
    #[arg(long)]
    journal_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::DeriveDowntime(a) => derive_downtime(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Replay(a) => run_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn quantities(rows: &[(&str, String)]) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "quantity,value")?;
    for (k, v) in rows {
        writeln!(out, "{k},{v}")?;
    }
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    if !(a.horizon_hours > 0.0) {
        bail!("--horizon-hours must be positive");
    }
    let horizon = Duration::try_from_secs_f64(a.horizon_hours * 3600.0)?;
    let input = OptimizerInput::new(a.mu.0, a.tps, horizon)?;
    let o = optimize_exploration(&input);
    if o.degenerate {
        eprintln!("note: all gateway SRs are equal; exploration has no value beyond the minimum");
    }
    if o.multimodal {
        eprintln!("note: V(e) has more than one local maximum");
    }
    quantities(&[
        ("e_star", fmt6(Some(o.e_star))),
        ("n_star", o.n_star.to_string()),
        ("v_star", fmt6(Some(o.v_star))),
        ("degenerate", o.degenerate.to_string()),
        ("multimodal", o.multimodal.to_string()),
    ])?;
    if let Some(path) = a.curve_csv {
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["e", "n", "v"])?;
        for (e, v) in volume_curve(&input, a.curve_points) {
            w.write_record([fmt6(Some(e)), fmt6(Some(input.window_size(e))), fmt6(Some(v))])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn usage_error(msg: &str) -> ! {
    use clap::CommandFactory;
    Cli::command().error(clap::error::ErrorKind::ValueValidation, msg).exit()
}

fn derive_downtime(a: DowntimeArgs) -> Result<()> {
    let sr2 = a.sr2.unwrap_or_else(|| default_sr2(a.sr1));
    if !(0.0 < sr2 && sr2 < a.sr1 && a.sr1 < 100.0) {
        usage_error(&format!("need 0 < sr2 < sr1 < 100, got sr1 {} and sr2 {sr2}", a.sr1));
    }
    let variant = match a.variant {
        Variant::Published => RootVariant::Published,
        Variant::ExactRoot => RootVariant::ExactRoot,
    };
    let d = DowntimeDerivation::derive(
        DowntimeInput {
            sr1: a.sr1,
            sr2,
            sigma: a.sigma,
            tps: a.tps,
            avg_latency_s: a.latency_s,
        },
        variant,
    )?;
    let mut rows = vec![
        ("sr2", fmt6(Some(sr2))),
        ("reward_factor", fmt6(Some(d.reward_factor))),
        ("threshold", fmt6(Some(d.threshold))),
        ("k", fmt6(Some(d.k))),
        ("t_c", fmt6(Some(d.t_c))),
        ("in_flight", fmt6(Some(d.in_flight))),
        ("latency_guard", d.latency_ok.to_string()),
    ];
    if !d.latency_ok {
        rows.push(("adjusted_reward_factor", fmt6(d.adjusted_reward_factor)));
    }
    quantities(&rows)
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("{}", path.display()))
}

fn resolve_seed(flag: Option<u64>, scenario: &Scenario) -> Result<u64> {
    if let Some(s) = flag.or(scenario.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

/// Invocation as recorded in manifests; the output directory is left out so
/// identical runs into different directories record the same command.
fn recorded_command() -> Vec<String> {
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--out" {
            args.next();
        } else if !a.starts_with("--out=") {
            out.push(a);
        }
    }
    out
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    f(file).with_context(|| format!("writing {}", path.display()))
}

const RUN_OUTPUTS: [&str; 8] = [
    "metrics.csv",
    "gateways.csv",
    "timeseries.csv",
    "downtime.csv",
    "final_scores.csv",
    "windows.csv",
    "feedback_log.csv",
    "manifest.json",
];

fn simulate(a: SimulateArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let seed = resolve_seed(a.seed, &scenario)?;
    let out = run(
        &scenario,
        &RunConfig {
            seed,
            journal: true,
            watch: None,
        },
    )?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let m = &out.metrics;
    write_file(&a.out, "metrics.csv", |f| Ok(m.write_metrics_csv(f)?))?;
    write_file(&a.out, "gateways.csv", |f| Ok(m.write_gateways_csv(f)?))?;
    write_file(&a.out, "timeseries.csv", |f| Ok(m.write_timeseries_csv(f)?))?;
    write_file(&a.out, "downtime.csv", |f| Ok(m.write_downtime_csv(f)?))?;
    write_file(&a.out, "final_scores.csv", |f| {
        Ok(write_final_scores_csv(&out.final_scores, f)?)
    })?;
    write_file(&a.out, "windows.csv", |f| Ok(out.store.write_windows_csv(f)?))?;
    let journal = out.journal.as_deref().unwrap_or_default();
    write_file(&a.out, "feedback_log.csv", |f| Ok(write_journal(journal, f)?))?;
    let manifest = Manifest::new(
        &scenario,
        seed,
        recorded_command(),
        &out,
        RUN_OUTPUTS.iter().map(|s| s.to_string()).collect(),
    );
    write_file(&a.out, "manifest.json", |mut f| {
        Ok(f.write_all(manifest.to_json().as_bytes())?)
    })?;
    m.write_metrics_csv(io::stdout().lock())?;
    Ok(())
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, end, count] = parts.as_slice() else {
        bail!("--grid-range `{s}` is not start:end:count");
    };
    let (start, end): (f64, f64) = (start.parse()?, end.parse()?);
    let count: usize = count.parse()?;
    if count == 0 {
        bail!("--grid-range count must be positive");
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = (end - start) / (count - 1) as f64;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let seed = resolve_seed(a.seed, &scenario)?;
    let grid = match &a.grid_range {
        Some(r) => parse_range(r)?,
        None => a.grid.clone(),
    };
    let param = match a.param {
        Param::Exploration => SweepParam::Exploration,
        Param::Sigma => SweepParam::Sigma,
    };
    let rows = sweep(&scenario, param, &grid, seed, a.jobs, a.replicates)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out, "sweep.csv", |f| Ok(write_sweep_csv(param, &rows, f)?))?;
    let manifest = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "artifact_version": ARTIFACT_VERSION,
        "seed": seed,
        "command": recorded_command(),
        "param": param,
        "grid": grid,
        "replicates": a.replicates,
        "outputs": ["sweep.csv", "manifest.json"],
        "scenario": scenario,
    });
    write_file(&a.out, "manifest.json", |mut f| {
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        Ok(f.write_all(s.as_bytes())?)
    })?;
    write_sweep_csv(param, &rows, io::stdout().lock())?;
    Ok(())
}

fn run_replay(a: ReplayArgs) -> Result<()> {
    let manifest_path = match a.manifest {
        Some(p) => p,
        None => a
            .log
            .parent()
            .unwrap_or(Path::new("."))
            .join("manifest.json"),
    };
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest =
        Manifest::from_json(&text).with_context(|| format!("{}", manifest_path.display()))?;
    let log = fs::File::open(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let rows = read_journal(log).with_context(|| format!("{}", a.log.display()))?;
    let mut fl = manifest.feedback_loop()?;
    replay(&rows, &mut fl).with_context(|| format!("{}", a.log.display()))?;
    if let Some(path) = a.journal_out {
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_journal(fl.journal().unwrap_or_default(), f)?;
    }
    let scores = fl.store().final_scores(manifest.end().max(fl.clock()));
    write_final_scores_csv(&scores, io::stdout().lock())?;
    Ok(())
}
