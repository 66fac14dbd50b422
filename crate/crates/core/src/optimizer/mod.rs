//! Offline derivation of the exploration factor and window size.
//!
//! Each gateway's windowed score is approximated as a normal with the
//! binomial variance of its long-term SR. With `e` explored per gateway over
//! a recency horizon, the window holds `n(e) = e · horizon · tps` outcomes,
//! and the share of traffic landing on the truly best gateway is
//!
//! ```text
//! V(e) = e + (1 − m·e) · Π_{i<m} P(X_best > X_i | n(e))
//! ```
//!
//! The optimizer maximizes `V` over `e ∈ (0, 1/m)`.

mod normal;
mod search;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use normal::std_normal_cdf;

use crate::domain::{ExplorationParams, DEFAULT_MAX_WINDOW_AGE};
use crate::error::{invalid, Result};

/// Grid points scanned before the golden-section refinement.
pub const PRESCAN_POINTS: usize = 200;
/// Distance kept from the open ends of `(0, 1/m)`.
pub const SEARCH_MARGIN: f64 = 1e-6;
const SEARCH_TOL: f64 = 1e-7;

/// Probability that the better gateway's windowed score beats the worse
/// one's when both windows hold `n` outcomes.
pub fn prob_better(mu_lo: f64, mu_hi: f64, n: f64) -> Result<f64> {
    for (name, mu) in [("mu_lo", mu_lo), ("mu_hi", mu_hi)] {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(invalid(name, format!("{mu} not in (0, 1)")));
        }
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(invalid("n", format!("{n} must be positive")));
    }
    let var = (mu_lo * (1.0 - mu_lo) + mu_hi * (1.0 - mu_hi)) / n;
    std_normal_cdf((mu_hi - mu_lo) / var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInput {
    means: Vec<f64>,
    tps: f64,
    #[serde(with = "crate::domain::serde_secs", rename = "horizon_s")]
    horizon: Duration,
}

impl OptimizerInput {
    /// `means` are long-term success rates as fractions, in any order.
    pub fn new(mut means: Vec<f64>, tps: f64, horizon: Duration) -> Result<Self> {
        if means.len() < 2 {
            return Err(invalid("gateway means", "need at least two gateways"));
        }
        if let Some(bad) = means.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(invalid("gateway means", format!("{bad} not in (0, 1)")));
        }
        if !(tps > 0.0 && tps.is_finite()) {
            return Err(invalid("tps", format!("{tps} must be positive")));
        }
        if horizon.is_zero() {
            return Err(invalid("horizon", "must be positive"));
        }
        means.sort_by(f64::total_cmp);
        Ok(Self {
            means,
            tps,
            horizon,
        })
    }

    pub fn with_default_horizon(means: Vec<f64>, tps: f64) -> Result<Self> {
        Self::new(means, tps, DEFAULT_MAX_WINDOW_AGE)
    }

    /// Ascending; the last entry is the best gateway.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn gateway_count(&self) -> usize {
        self.means.len()
    }

    pub fn tps(&self) -> f64 {
        self.tps
    }

    pub fn horizon(&self) -> Duration {
        self.horizon
    }

    /// Window size implied by exploring `e` per gateway over the horizon.
    pub fn window_size(&self, e: f64) -> f64 {
        e * self.horizon.as_secs_f64() * self.tps
    }

    fn is_degenerate(&self) -> bool {
        self.means.windows(2).all(|w| w[0] == w[1])
    }
}

/// `V(e)`: expected traffic fraction routed to the best gateway.
pub fn volume_fraction(e: f64, input: &OptimizerInput) -> Result<f64> {
    let m = input.gateway_count() as f64;
    if !(e >= 0.0 && e < 1.0 / m) {
        return Err(invalid("exploration factor", format!("{e} not in [0, 1/{m})")));
    }
    let (best, rest) = input.means.split_last().expect("at least two gateways");
    let mut p_best = 1.0;
    if e == 0.0 {
        p_best = 0.5f64.powi(rest.len() as i32);
    } else {
        let n = input.window_size(e);
        for mu in rest {
            p_best *= prob_better(*mu, *best, n)?;
        }
    }
    Ok(e + (1.0 - m * e) * p_best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOutput {
    pub e_star: f64,
    pub n_star: usize,
    pub v_star: f64,
    /// No gateway is better than another; `e_star` sits at the lower bound.
    pub degenerate: bool,
    /// The pre-scan found more than one local maximum.
    pub multimodal: bool,
}

/// Maximizes [`volume_fraction`] over `(0, 1/m)`: a 200-point pre-scan
/// brackets the best grid point, then golden-section search narrows it.
pub fn optimize_exploration(input: &OptimizerInput) -> OptimizerOutput {
    let m = input.gateway_count() as f64;
    let lo = SEARCH_MARGIN;
    let hi = 1.0 / m - SEARCH_MARGIN;
    let v = |e: f64| volume_fraction(e, input).expect("e inside the search interval");

    let (e_star, v_star, degenerate, multimodal) = if input.is_degenerate() {
        (lo, v(lo), true, false)
    } else {
        let scan = search::grid_scan(v, lo, hi, PRESCAN_POINTS);
        let i = scan.argmax;
        let a = scan.points[i.saturating_sub(1)].0;
        let b = scan.points[(i + 1).min(scan.points.len() - 1)].0;
        let (e, ve) = search::golden_section_max(v, a, b, SEARCH_TOL);
        let (e, ve) = if ve >= scan.points[i].1 {
            (e, ve)
        } else {
            scan.points[i]
        };
        (e, ve, false, scan.local_maxima > 1)
    };
    OptimizerOutput {
        e_star,
        n_star: (input.window_size(e_star).round() as usize).max(1),
        v_star,
        degenerate,
        multimodal,
    }
}

/// `(e, V(e))` samples across `[0, 1/m)` for plotting the curve.
pub fn volume_curve(input: &OptimizerInput, points: usize) -> Vec<(f64, f64)> {
    let hi = 1.0 / input.gateway_count() as f64;
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let e = hi * i as f64 / points as f64;
            (e, volume_fraction(e, input).expect("e below 1/m"))
        })
        .collect()
}

/// Operating range the per-gateway exploration factor is clamped into.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub min: f64,
    pub max: f64,
}

impl Default for ClampRange {
    fn default() -> Self {
        Self {
            min: 0.05,
            max: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamped {
    Low,
    High,
}

/// Long-term statistics of one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionHistory {
    /// Long-term success rate of each gateway, as a fraction.
    pub gateway_sr: Vec<f64>,
    pub tps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedExploration {
    pub params: ExplorationParams,
    /// `None` for a single-gateway dimension.
    pub optimum: Option<OptimizerOutput>,
    pub clamped: Option<Clamped>,
    pub single_gateway: bool,
}

/// Derives a dimension's explore/exploit parameters from its history.
pub fn derive_dimension_params(
    history: &DimensionHistory,
    clamp: ClampRange,
    max_window_age: Duration,
) -> Result<DerivedExploration> {
    if !(clamp.min > 0.0 && clamp.min <= clamp.max && clamp.max <= 0.5) {
        return Err(invalid("clamp range", format!("{clamp:?}")));
    }
    let window = |e: f64| ((e * max_window_age.as_secs_f64() * history.tps).round() as usize).max(1);
    match history.gateway_sr.len() {
        0 => Err(invalid("history", "no gateways")),
        1 => {
            if !(history.tps > 0.0) {
                return Err(invalid("tps", "must be positive"));
            }
            Ok(DerivedExploration {
                params: ExplorationParams::new(clamp.min, window(clamp.min), max_window_age)?,
                optimum: None,
                clamped: None,
                single_gateway: true,
            })
        }
        _ => {
            let input =
                OptimizerInput::new(history.gateway_sr.clone(), history.tps, max_window_age)?;
            let optimum = optimize_exploration(&input);
            let (e, clamped) = if optimum.e_star < clamp.min {
                (clamp.min, Some(Clamped::Low))
            } else if optimum.e_star > clamp.max {
                (clamp.max, Some(Clamped::High))
            } else {
                (optimum.e_star, None)
            };
            let n = if clamped.is_some() { window(e) } else { optimum.n_star };
            Ok(DerivedExploration {
                params: ExplorationParams::new(e, n, max_window_age)?,
                optimum: Some(optimum),
                clamped,
                single_gateway: false,
            })
        }
    }
}
