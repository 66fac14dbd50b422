//! Health-score controller for downtime detection.
//!
//! Every initiation multiplies the score by `1 − a`; every confirmed success
//! adds `a`. In expectation this is `v ← (1 − a)·v + a·SR`, whose stationary
//! mean is `SR` and whose stationary variance is `a/(2 − a)·SR·(1 − SR)`.
//! A gateway is DOWN once its score drops below a threshold placed
//! `sigma` standard deviations under the mean. The reward factor `a` is the
//! one that minimizes the number of transactions needed to cross that
//! threshold after the SR falls from `sr1` to `sr2`.
//!
//! SR arguments in this module are percentages; scores are fractions.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{DowntimeParams, Timestamp};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HealthState {
    Up,
    Down,
}

impl HealthState {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthState::Up => "UP",
            HealthState::Down => "DOWN",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthScore {
    pub value: f64,
    pub state: HealthState,
    pub last_transition: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Revival {
    Revived,
    NotDown,
    TooEarly { remaining: Duration },
}

impl HealthScore {
    pub fn new(at: Timestamp) -> Self {
        Self {
            value: 1.0,
            state: HealthState::Up,
            last_transition: at,
        }
    }

    pub fn with_value(value: f64, at: Timestamp) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            ..Self::new(at)
        }
    }

    pub fn is_down(&self) -> bool {
        self.state == HealthState::Down
    }

    pub fn penalize(&mut self, a: f64) {
        self.value *= 1.0 - a;
    }

    /// Additive reward, clamped at 1.
    pub fn reward(&mut self, a: f64) {
        self.value = (self.value + a).min(1.0);
    }

    /// State a fresh evaluation would assign, without recording it.
    pub fn observed_state(&self, threshold: f64) -> HealthState {
        if self.value < threshold {
            HealthState::Down
        } else {
            HealthState::Up
        }
    }

    /// Marks the gateway DOWN iff its score is strictly below `threshold`.
    /// Returns whether the state changed.
    pub fn evaluate_state(&mut self, threshold: f64, now: Timestamp) -> bool {
        let next = self.observed_state(threshold);
        if next == self.state {
            return false;
        }
        self.state = next;
        self.last_transition = now;
        true
    }

    /// Soft reset of a DOWN gateway once `interval` has elapsed: the score
    /// gets back what ten penalizes took, and the state returns to UP.
    pub fn revive(&mut self, a: f64, now: Timestamp, interval: Duration) -> Revival {
        if !self.is_down() {
            return Revival::NotDown;
        }
        let elapsed = now.since(self.last_transition);
        if elapsed < interval {
            return Revival::TooEarly {
                remaining: interval - elapsed,
            };
        }
        self.value = (self.value / (1.0 - a).powi(10)).min(1.0);
        self.state = HealthState::Up;
        self.last_transition = now;
        Revival::Revived
    }
}

fn check_sr(name: &'static str, sr: f64) -> Result<()> {
    if sr > 0.0 && sr < 100.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{sr} not in (0, 100)")))
    }
}

fn check_pair(sr1: f64, sr2: f64) -> Result<()> {
    check_sr("sr1", sr1)?;
    check_sr("sr2", sr2)?;
    if sr2 >= sr1 {
        return Err(invalid("sr2", format!("{sr2} must be below sr1 = {sr1}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid("sigma", format!("{sigma} must be positive")))
    }
}

/// Stationary `(mean, std)` of the score under Bernoulli(sr/100) traffic.
pub fn stationary_stats(sr: f64, a: f64) -> Result<(f64, f64)> {
    check_sr("sr", sr)?;
    if !(a > 0.0 && a < 1.0) {
        return Err(invalid("reward factor", format!("{a} not in (0, 1)")));
    }
    let p = sr / 100.0;
    Ok((p, (a / (2.0 - a) * p * (1.0 - p)).sqrt()))
}

/// `ln(1 − x)·(1 − x)/x + 1/2`, the stationarity condition of `t_c(a)`
/// with `2 − a ≈ 2` and `x = k·√(a/2)`.
pub fn decay_residual(x: f64) -> f64 {
    (1.0 - x).ln() * (1.0 - x) / x + 0.5
}

/// Root of [`decay_residual`] on (0, 1) by bisection.
pub fn solve_decay_root() -> f64 {
    // residual → −1/2 as x → 0 and → +1/2 as x → 1
    let (mut lo, mut hi) = (1e-6, 1.0 - 1e-12);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if decay_residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `k = sigma·√(sr1(100 − sr1))/(sr1 − sr2)`.
pub fn k_factor(sr1: f64, sr2: f64, sigma: f64) -> Result<f64> {
    check_pair(sr1, sr2)?;
    check_sigma(sigma)?;
    Ok(sigma * (sr1 * (100.0 - sr1)).sqrt() / (sr1 - sr2))
}

/// `a = (sr1 − sr2)²/(sigma²·sr1·(100 − sr1))`, i.e. `1/k²`.
pub fn derive_reward_factor(sr1: f64, sr2: f64, sigma: f64) -> Result<f64> {
    check_pair(sr1, sr2)?;
    check_sigma(sigma)?;
    let a = (sr1 - sr2).powi(2) / (sigma * sigma * sr1 * (100.0 - sr1));
    if a >= 1.0 {
        return Err(Error::RewardFactorTooLarge(a));
    }
    Ok(a)
}

/// `(0.29·sr1 + 0.71·sr2)/100`. Equal SRs are allowed and give `sr/100`.
pub fn derive_threshold(sr1: f64, sr2: f64) -> Result<f64> {
    check_sr("sr1", sr1)?;
    check_sr("sr2", sr2)?;
    if sr2 > sr1 {
        return Err(invalid("sr2", format!("{sr2} must not exceed sr1 = {sr1}")));
    }
    Ok((0.29 * sr1 + 0.71 * sr2) / 100.0)
}

/// `t_c = −(1/a)·ln(1 − k·√(a/(2 − a)))` for a given `a` and `k`.
pub fn detection_count_with(a: f64, k: f64) -> Result<f64> {
    let x = k * (a / (2.0 - a)).sqrt();
    if x >= 1.0 {
        return Err(Error::ThresholdUnreachable(x));
    }
    Ok(-(1.0 - x).ln() / a)
}

/// Transactions the mean score needs to fall `sigma` stationary standard
/// deviations after the SR drops from `sr1` to `sr2`.
pub fn detection_count(sr1: f64, sr2: f64, sigma: f64) -> Result<f64> {
    let a = derive_reward_factor(sr1, sr2, sigma)?;
    detection_count_with(a, k_factor(sr1, sr2, sigma)?)
}

/// Mean score `T` transactions after the SR drops from `sr1` to `sr2`.
pub fn decay_curve(sr1: f64, sr2: f64, a: f64, t: f64) -> f64 {
    (sr1 - sr2) / 100.0 * (-a * t).exp() + sr2 / 100.0
}

/// `sr1/100·(1 − a)^N > threshold` with `N = tps·latency` in-flight
/// transactions penalized before any of their rewards arrive.
pub fn check_latency_guard(sr1: f64, a: f64, tps: f64, latency_s: f64, threshold: f64) -> bool {
    sr1 / 100.0 * (1.0 - a).powf(tps * latency_s) > threshold
}

/// Largest reward factor satisfying the latency guard, by bisection.
/// `None` when no positive factor does.
pub fn max_latency_safe_reward_factor(
    sr1: f64,
    tps: f64,
    latency_s: f64,
    threshold: f64,
) -> Option<f64> {
    let ok = |a: f64| check_latency_guard(sr1, a, tps, latency_s, threshold);
    if !ok(f64::MIN_POSITIVE) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    (lo > 0.0).then_some(lo)
}

/// `sr2` default when a merchant has not configured one.
pub fn default_sr2(sr1: f64) -> f64 {
    (sr1 - 30.0).max(5.0)
}

/// Which approximation of the `t_c` stationarity root feeds `a` and the
/// threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootVariant {
    /// `x ≈ √½`, giving `a = 1/k²` and the 0.29/0.71 threshold weights.
    #[default]
    Published,
    /// The exact root `x* ≈ 0.71533`: `a = 2x*²/k²`, weights `(1 − x*, x*)`.
    ExactRoot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DowntimeInput {
    pub sr1: f64,
    pub sr2: f64,
    pub sigma: f64,
    pub tps: f64,
    pub avg_latency_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DowntimeDerivation {
    pub input: DowntimeInput,
    pub variant: RootVariant,
    pub k: f64,
    /// Reward factor from the derivation, before any latency adjustment.
    pub reward_factor: f64,
    pub threshold: f64,
    pub t_c: f64,
    /// In-flight transactions `N = tps·latency`.
    pub in_flight: f64,
    pub latency_ok: bool,
    /// Set when the guard failed and a smaller factor satisfies it.
    pub adjusted_reward_factor: Option<f64>,
}

impl DowntimeDerivation {
    pub fn derive(input: DowntimeInput, variant: RootVariant) -> Result<Self> {
        let DowntimeInput {
            sr1,
            sr2,
            sigma,
            tps,
            avg_latency_s,
        } = input;
        if !(tps > 0.0 && tps.is_finite()) {
            return Err(invalid("tps", format!("{tps} must be positive")));
        }
        if !(avg_latency_s >= 0.0 && avg_latency_s.is_finite()) {
            return Err(invalid("latency", format!("{avg_latency_s} must be non-negative")));
        }
        let k = k_factor(sr1, sr2, sigma)?;
        let (reward_factor, threshold) = match variant {
            RootVariant::Published => (
                derive_reward_factor(sr1, sr2, sigma)?,
                derive_threshold(sr1, sr2)?,
            ),
            RootVariant::ExactRoot => {
                let x = solve_decay_root();
                let a = 2.0 * x * x / (k * k);
                if a >= 1.0 {
                    return Err(Error::RewardFactorTooLarge(a));
                }
                (a, ((1.0 - x) * sr1 + x * sr2) / 100.0)
            }
        };
        let t_c = detection_count_with(reward_factor, k)?;
        let latency_ok = check_latency_guard(sr1, reward_factor, tps, avg_latency_s, threshold);
        let adjusted_reward_factor = if latency_ok {
            None
        } else {
            max_latency_safe_reward_factor(sr1, tps, avg_latency_s, threshold)
        };
        Ok(Self {
            input,
            variant,
            k,
            reward_factor,
            threshold,
            t_c,
            in_flight: tps * avg_latency_s,
            latency_ok,
            adjusted_reward_factor,
        })
    }

    /// Reward factor to run with: the adjusted one when the guard failed.
    pub fn effective_reward_factor(&self) -> f64 {
        self.adjusted_reward_factor.unwrap_or(self.reward_factor)
    }

    pub fn params(&self, revival_interval: Duration) -> Result<DowntimeParams> {
        DowntimeParams::new(
            self.effective_reward_factor(),
            self.threshold,
            self.input.sigma,
            revival_interval,
        )
    }
}
