//! Parameter sweeps. Every grid point runs with the same seed, so points
//! share arrivals and outcome draws.

use std::io;

use rayon::prelude::*;
use serde::Serialize;

use routepilot_core::experiments::fmt6;

use crate::run::{run, run_downtime_case, RunConfig};
use crate::scenario::{DowntimeSpec, ExplorationSpec, Scenario};
use crate::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Exploration factor `e` with window size `round(e · age · arm tps)`.
    Exploration,
    /// Sigma factor of derived downtime parameters.
    Sigma,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exploration => "exploration",
            Self::Sigma => "sigma",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub txns: u64,
    pub overall_sr: f64,
    /// Share of traffic on the gateway with the highest time-averaged SR.
    pub best_gateway_share: f64,
    /// Median initiations on the dropped gateway until DOWN, over replicates
    /// that detected it.
    pub detection_txns: Option<f64>,
    pub detection_s: Option<f64>,
}

/// The template with `value` substituted for `param`.
pub fn apply_point(
    template: &Scenario,
    param: SweepParam,
    value: f64,
) -> Result<Scenario, SimError> {
    let mut s = template.clone();
    let mut touched = false;
    for arm in &mut s.plan.arms {
        match param {
            SweepParam::Exploration => {
                let age = match &arm.exploration {
                    Some(ExplorationSpec::Explicit { max_window_age_s, .. })
                    | Some(ExplorationSpec::Derive { max_window_age_s, .. }) => *max_window_age_s,
                    None => continue,
                };
                let window_size = ((value * age * template.arm_tps()).round() as usize).max(1);
                arm.exploration = Some(ExplorationSpec::Explicit {
                    factor: value,
                    window_size,
                    max_window_age_s: age,
                });
                touched = true;
            }
            SweepParam::Sigma => {
                if let Some(DowntimeSpec::Derive { sigma, .. }) = &mut arm.downtime {
                    *sigma = value;
                    touched = true;
                }
            }
        }
    }
    if !touched {
        let what = match param {
            SweepParam::Exploration => "an arm with exploration",
            SweepParam::Sigma => "an arm with derived downtime",
        };
        return Err(SimError::Sweep(format!("template has no {what}")));
    }
    s.validate()?;
    Ok(s)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn point(
    template: &Scenario,
    param: SweepParam,
    value: f64,
    seed: u64,
    replicates: u64,
) -> Result<SweepRow, SimError> {
    let s = apply_point(template, param, value)?;
    let best = s.best_gateway().id.clone();
    let has_drop = s.drop_point().is_some();
    let (mut txns, mut sr, mut share) = (0u64, 0.0, 0.0);
    let (mut det_txns, mut det_s) = (Vec::new(), Vec::new());
    for r in 0..replicates {
        let seed = seed.wrapping_add(r);
        let metrics = if param == SweepParam::Sigma && has_drop {
            let case = run_downtime_case(&s, seed)?;
            if let Some(a) = case.arms.iter().find(|a| a.detected_at.is_some()) {
                det_txns.push(a.txns_to_detect.unwrap_or_default() as f64);
                det_s.push(a.seconds_to_detect.unwrap_or_default());
            }
            case.output.metrics
        } else {
            run(&s, &RunConfig { seed, ..RunConfig::default() })?.metrics
        };
        txns += metrics.txns();
        sr += metrics.overall_sr().unwrap_or(0.0);
        share += metrics.share(&best);
    }
    let n = replicates as f64;
    Ok(SweepRow {
        param: value,
        txns,
        overall_sr: sr / n,
        best_gateway_share: share / n,
        detection_txns: median(det_txns),
        detection_s: median(det_s),
    })
}

/// One row per grid point, in grid order. Points run on up to `jobs`
/// threads; each run is single-threaded, so the rows do not depend on `jobs`.
pub fn sweep(
    template: &Scenario,
    param: SweepParam,
    grid: &[f64],
    seed: u64,
    jobs: usize,
    replicates: u64,
) -> Result<Vec<SweepRow>, SimError> {
    if grid.is_empty() {
        return Err(SimError::Sweep("grid is empty".into()));
    }
    if replicates == 0 {
        return Err(SimError::Sweep("replicates must be at least 1".into()));
    }
    // fail fast on a bad template before spawning anything
    apply_point(template, param, grid[0])?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Sweep(e.to_string()))?;
    pool.install(|| {
        grid.par_iter()
            .map(|&v| point(template, param, v, seed, replicates))
            .collect()
    })
}

pub fn write_sweep_csv<W: io::Write>(
    param: SweepParam,
    rows: &[SweepRow],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        param.as_str(),
        "txn_count",
        "overall_sr",
        "best_gateway_share",
        "detection_txns",
        "detection_s",
    ])?;
    for r in rows {
        w.write_record([
            fmt6(Some(r.param)),
            r.txns.to_string(),
            fmt6(Some(r.overall_sr)),
            fmt6(Some(r.best_gateway_share)),
            fmt6(r.detection_txns),
            fmt6(r.detection_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grid value with the highest best-gateway share; the first on ties.
pub fn argmax_share(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.best_gateway_share >= r.best_gateway_share => Some(b),
            _ => Some(r),
        })
        .map(|r| r.param)
}
