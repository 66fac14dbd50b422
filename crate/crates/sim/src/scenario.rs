//! Scenario documents (schema version 1).
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "tps": 1.0,
//!   "horizon_s": 86400,
//!   "arrivals": "poisson",
//!   "seed": 7,
//!   "max_retries": 0,
//!   "dimension": {"MERCHANT_ID": "m1"},
//!   "gateways": [
//!     {"id": "GW1", "regimes": [{"start_s": 0, "sr_percent": 80}],
//!      "success_latency": {"kind": "lognormal", "median_s": 2, "sigma": 0.5},
//!      "failure_latency": {"kind": "fixed", "seconds": 30},
//!      "init_fail_prob": 0.0}
//!   ],
//!   "plan": {"arms": [
//!     {"id": "dynamic", "strategy": "dynamic", "exploration": {"mode": "derive"}},
//!     {"id": "baseline", "strategy": "rule-based", "priority": ["GW1"]}
//!   ]}
//! }
//! ```
//!
//! Latency defaults (success lognormal median 2 s, failure lognormal median
//! 30 s, both σ 0.5 and capped at 300 s) are placeholders, not measurements.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use routepilot_core::domain::{DEFAULT_MAX_WINDOW_AGE, DEFAULT_REVIVAL_INTERVAL};
use routepilot_core::downtime::{default_sr2, DowntimeDerivation, DowntimeInput, RootVariant};
use routepilot_core::engine::{StrategyOptions, StrategyRegistry};
use routepilot_core::experiments::{ArmSpec, ExperimentPlan};
use routepilot_core::optimizer::{derive_dimension_params, ClampRange, DimensionHistory};
use routepilot_core::window::ScoreRule;
use routepilot_core::{
    canonical_key, ConfigurationId, DimensionKey, DowntimeParams, ExplorationParams,
    FeedbackConfig, GatewayId, Timestamp,
};

use crate::SimError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    #[default]
    Poisson,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencySpec {
    Lognormal {
        median_s: f64,
        sigma: f64,
        #[serde(default = "default_cap")]
        cap_s: f64,
    },
    Fixed {
        seconds: f64,
    },
}

fn default_cap() -> f64 {
    300.0
}

impl LatencySpec {
    pub fn default_success() -> Self {
        Self::Lognormal {
            median_s: 2.0,
            sigma: 0.5,
            cap_s: 300.0,
        }
    }

    pub fn default_failure() -> Self {
        Self::Lognormal {
            median_s: 30.0,
            sigma: 0.5,
            cap_s: 300.0,
        }
    }

    /// Latency in seconds for a standard normal draw `z`.
    pub fn sample(&self, z: f64) -> f64 {
        match *self {
            Self::Lognormal {
                median_s,
                sigma,
                cap_s,
            } => (median_s * (sigma * z).exp()).min(cap_s),
            Self::Fixed { seconds } => seconds,
        }
    }

    /// Mean of the (uncapped) distribution.
    pub fn mean_s(&self) -> f64 {
        match *self {
            Self::Lognormal {
                median_s, sigma, ..
            } => median_s * (sigma * sigma / 2.0).exp(),
            Self::Fixed { seconds } => seconds,
        }
    }

    fn validate(&self, field: &str) -> Result<(), SimError> {
        let ok = match *self {
            Self::Lognormal {
                median_s,
                sigma,
                cap_s,
            } => median_s > 0.0 && sigma >= 0.0 && cap_s >= median_s && cap_s.is_finite(),
            Self::Fixed { seconds } => seconds >= 0.0 && seconds.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::scenario(field, format!("{self:?} is not a valid latency")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub start_s: f64,
    pub sr_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayModel {
    pub id: String,
    pub regimes: Vec<Regime>,
    #[serde(default = "LatencySpec::default_success")]
    pub success_latency: LatencySpec,
    #[serde(default = "LatencySpec::default_failure")]
    pub failure_latency: LatencySpec,
    #[serde(default)]
    pub init_fail_prob: f64,
}

impl GatewayModel {
    /// SR fraction in force at `t` seconds.
    pub fn sr_at(&self, t: f64) -> f64 {
        let i = self.regimes.partition_point(|r| r.start_s <= t);
        self.regimes[i.saturating_sub(1)].sr_percent / 100.0
    }

    /// Time-weighted mean SR fraction over `[0, horizon]`.
    pub fn mean_sr(&self, horizon_s: f64) -> f64 {
        let mut total = 0.0;
        for (i, r) in self.regimes.iter().enumerate() {
            let end = self
                .regimes
                .get(i + 1)
                .map_or(horizon_s, |n| n.start_s)
                .min(horizon_s);
            total += (end - r.start_s).max(0.0) * r.sr_percent / 100.0;
        }
        total / horizon_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExplorationSpec {
    Explicit {
        factor: f64,
        window_size: usize,
        #[serde(default = "default_age_s")]
        max_window_age_s: f64,
    },
    /// Optimized from the gateways' first-regime SRs (or
    /// `gateway_sr_percent`) at the arm's share of the scenario TPS.
    Derive {
        #[serde(default)]
        clamp: Option<ClampRange>,
        #[serde(default)]
        gateway_sr_percent: Option<Vec<f64>>,
        #[serde(default = "default_age_s")]
        max_window_age_s: f64,
    },
}

fn default_age_s() -> f64 {
    DEFAULT_MAX_WINDOW_AGE.as_secs_f64()
}

fn default_revival_s() -> f64 {
    DEFAULT_REVIVAL_INTERVAL.as_secs_f64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DowntimeSpec {
    Explicit {
        reward_factor: f64,
        threshold: f64,
        sigma_factor: f64,
        #[serde(default = "default_revival_s")]
        revival_interval_s: f64,
    },
    /// Derived from `sr1`/`sr2` (percent) and `sigma`. `sr2` defaults to
    /// `max(sr1 − 30, 5)` and `avg_latency_s` to the mean success latency
    /// of the slowest gateway.
    Derive {
        sr1: f64,
        #[serde(default)]
        sr2: Option<f64>,
        sigma: f64,
        #[serde(default)]
        avg_latency_s: Option<f64>,
        #[serde(default)]
        variant: RootVariant,
        #[serde(default = "default_revival_s")]
        revival_interval_s: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub id: String,
    pub strategy: String,
    #[serde(default)]
    pub priority: Vec<String>,
    #[serde(default)]
    pub exploration: Option<ExplorationSpec>,
    #[serde(default)]
    pub downtime: Option<DowntimeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub arms: Vec<ArmConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub tps: f64,
    pub horizon_s: f64,
    #[serde(default)]
    pub arrivals: Arrivals,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_retries: usize,
    #[serde(default)]
    pub dimension: BTreeMap<String, String>,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub score_rule: ScoreRule,
    /// Width of the timeseries buckets.
    #[serde(default = "default_bucket_s")]
    pub timeseries_bucket_s: f64,
    pub gateways: Vec<GatewayModel>,
    pub plan: PlanSpec,
}

fn default_bucket_s() -> f64 {
    3600.0
}

/// Parameters an arm actually runs with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedArm {
    pub id: String,
    pub strategy: String,
    pub priority: Vec<String>,
    pub exploration: Option<ExplorationParams>,
    pub downtime: Option<DowntimeParams>,
    /// Present when downtime parameters were derived.
    #[serde(default)]
    pub downtime_derivation: Option<DowntimeDerivation>,
}

impl ResolvedArm {
    pub fn spec(&self) -> Result<ArmSpec, SimError> {
        Ok(ArmSpec {
            id: ConfigurationId::new(&self.id)?,
            strategy: self.strategy.clone(),
            options: StrategyOptions {
                priority: self
                    .priority
                    .iter()
                    .map(GatewayId::new)
                    .collect::<Result<_, _>>()?,
            },
            exploration: self.exploration.clone(),
            downtime: self.downtime.clone(),
        })
    }
}

pub fn plan_of(arms: &[ResolvedArm]) -> Result<ExperimentPlan, SimError> {
    Ok(ExperimentPlan::new(
        arms.iter().map(ResolvedArm::spec).collect::<Result<_, _>>()?,
    )?)
}

fn secs(field: &str, s: f64) -> Result<Duration, SimError> {
    Duration::try_from_secs_f64(s).map_err(|e| SimError::scenario(field, e.to_string()))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SimError::scenario(&path, e.into_inner().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::scenario(
                "schema_version",
                format!("{} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if !(self.tps > 0.0 && self.tps.is_finite()) {
            return Err(SimError::scenario("tps", "must be positive"));
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(SimError::scenario("horizon_s", "must be positive"));
        }
        if !(self.timeseries_bucket_s > 0.0) {
            return Err(SimError::scenario("timeseries_bucket_s", "must be positive"));
        }
        if self.gateways.is_empty() {
            return Err(SimError::scenario("gateways", "need at least one gateway"));
        }
        if self.max_retries >= self.gateways.len() {
            return Err(SimError::scenario(
                "max_retries",
                format!("{} must be below the gateway count", self.max_retries),
            ));
        }
        self.dimension_key()?;
        let mut ids = BTreeSet::new();
        for (i, g) in self.gateways.iter().enumerate() {
            let at = |f: &str| format!("gateways[{i}].{f}");
            GatewayId::new(&g.id).map_err(|e| SimError::scenario(&at("id"), e.to_string()))?;
            if !ids.insert(g.id.as_str()) {
                return Err(SimError::scenario(&at("id"), format!("duplicate `{}`", g.id)));
            }
            match g.regimes.first() {
                Some(r) if r.start_s == 0.0 => {}
                _ => return Err(SimError::scenario(&at("regimes"), "first regime must start at 0")),
            }
            for (j, r) in g.regimes.iter().enumerate() {
                if !(r.sr_percent > 0.0 && r.sr_percent <= 100.0) {
                    return Err(SimError::scenario(
                        &at(&format!("regimes[{j}].sr_percent")),
                        format!("{} not in (0, 100]", r.sr_percent),
                    ));
                }
                if j > 0 && r.start_s <= g.regimes[j - 1].start_s {
                    return Err(SimError::scenario(
                        &at(&format!("regimes[{j}].start_s")),
                        "regimes must be sorted by strictly increasing start",
                    ));
                }
            }
            g.success_latency.validate(&at("success_latency"))?;
            g.failure_latency.validate(&at("failure_latency"))?;
            if !(0.0..1.0).contains(&g.init_fail_prob) {
                return Err(SimError::scenario(&at("init_fail_prob"), "must be in [0, 1)"));
            }
        }
        if self.plan.arms.is_empty() {
            return Err(SimError::scenario("plan.arms", "need at least one arm"));
        }
        let registry = StrategyRegistry::with_builtins();
        for (i, a) in self.plan.arms.iter().enumerate() {
            let field = |f: &str| format!("plan.arms[{i}].{f}");
            match registry.build(&a.strategy, &StrategyOptions::default()) {
                Ok(s) if s.needs_exploration() && a.exploration.is_none() => {
                    return Err(SimError::scenario(
                        &field("exploration"),
                        format!("strategy `{}` needs exploration parameters", a.strategy),
                    ));
                }
                Ok(_) => {}
                Err(e) => return Err(SimError::scenario(&field("strategy"), e.to_string())),
            }
            for p in &a.priority {
                if !ids.contains(p.as_str()) {
                    return Err(SimError::scenario(
                        &format!("plan.arms[{i}].priority"),
                        format!("unknown gateway `{p}`"),
                    ));
                }
            }
        }
        self.resolve_arms()?;
        Ok(())
    }

    /// Traffic one arm sees under the equal split.
    pub fn arm_tps(&self) -> f64 {
        self.tps / self.plan.arms.len().max(1) as f64
    }

    pub fn dimension_key(&self) -> Result<DimensionKey, SimError> {
        canonical_key(self.dimension.iter().map(|(f, v)| (f.as_str(), v.as_str())))
            .map_err(|e| SimError::scenario("dimension", e.to_string()))
    }

    pub fn gateway_ids(&self) -> Result<Vec<GatewayId>, SimError> {
        Ok(self
            .gateways
            .iter()
            .map(|g| GatewayId::new(&g.id))
            .collect::<Result<_, _>>()?)
    }

    /// Gateway with the highest time-weighted SR; first in file order on ties.
    pub fn best_gateway(&self) -> &GatewayModel {
        self.gateways
            .iter()
            .fold(None::<&GatewayModel>, |best, g| match best {
                Some(b) if b.mean_sr(self.horizon_s) >= g.mean_sr(self.horizon_s) => Some(b),
                _ => Some(g),
            })
            .expect("validated: at least one gateway")
    }

    fn resolve_exploration(
        &self,
        field: &str,
        spec: &ExplorationSpec,
    ) -> Result<ExplorationParams, SimError> {
        let wrap = |e: routepilot_core::Error| SimError::scenario(field, e.to_string());
        match spec {
            ExplorationSpec::Explicit {
                factor,
                window_size,
                max_window_age_s,
            } => ExplorationParams::new(*factor, *window_size, secs(field, *max_window_age_s)?)
                .map_err(wrap),
            ExplorationSpec::Derive {
                clamp,
                gateway_sr_percent,
                max_window_age_s,
            } => {
                let sr: Vec<f64> = match gateway_sr_percent {
                    Some(v) => v.iter().map(|p| p / 100.0).collect(),
                    None => self.gateways.iter().map(|g| g.regimes[0].sr_percent / 100.0).collect(),
                };
                let history = DimensionHistory {
                    // a perfect gateway would make the normal model degenerate
                    gateway_sr: sr.into_iter().map(|p| p.min(0.999_999)).collect(),
                    tps: self.arm_tps(),
                };
                let derived = derive_dimension_params(
                    &history,
                    clamp.unwrap_or_default(),
                    secs(field, *max_window_age_s)?,
                )
                .map_err(wrap)?;
                Ok(derived.params)
            }
        }
    }

    fn resolve_downtime(
        &self,
        field: &str,
        spec: &DowntimeSpec,
    ) -> Result<(DowntimeParams, Option<DowntimeDerivation>), SimError> {
        let wrap = |e: routepilot_core::Error| SimError::scenario(field, e.to_string());
        match spec {
            DowntimeSpec::Explicit {
                reward_factor,
                threshold,
                sigma_factor,
                revival_interval_s,
            } => Ok((
                DowntimeParams::new(
                    *reward_factor,
                    *threshold,
                    *sigma_factor,
                    secs(field, *revival_interval_s)?,
                )
                .map_err(wrap)?,
                None,
            )),
            DowntimeSpec::Derive {
                sr1,
                sr2,
                sigma,
                avg_latency_s,
                variant,
                revival_interval_s,
            } => {
                let latency = avg_latency_s.unwrap_or_else(|| {
                    self.gateways
                        .iter()
                        .map(|g| g.success_latency.mean_s())
                        .fold(0.0, f64::max)
                });
                let input = DowntimeInput {
                    sr1: *sr1,
                    sr2: sr2.unwrap_or_else(|| default_sr2(*sr1)),
                    sigma: *sigma,
                    tps: self.arm_tps(),
                    avg_latency_s: latency,
                };
                let d = DowntimeDerivation::derive(input, *variant).map_err(wrap)?;
                let params = d.params(secs(field, *revival_interval_s)?).map_err(wrap)?;
                Ok((params, Some(d)))
            }
        }
    }

    pub fn resolve_arms(&self) -> Result<Vec<ResolvedArm>, SimError> {
        self.plan
            .arms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let field = |f: &str| format!("plan.arms[{i}].{f}");
                ConfigurationId::new(&a.id)
                    .map_err(|e| SimError::scenario(&field("id"), e.to_string()))?;
                let exploration = a
                    .exploration
                    .as_ref()
                    .map(|s| self.resolve_exploration(&field("exploration"), s))
                    .transpose()?;
                let (downtime, downtime_derivation) = match &a.downtime {
                    Some(s) => {
                        let (p, d) = self.resolve_downtime(&field("downtime"), s)?;
                        (Some(p), d)
                    }
                    None => (None, None),
                };
                Ok(ResolvedArm {
                    id: a.id.clone(),
                    strategy: a.strategy.clone(),
                    priority: a.priority.clone(),
                    exploration,
                    downtime,
                    downtime_derivation,
                })
            })
            .collect()
    }

    /// The gateway with a single SR drop, and the drop time.
    pub fn drop_point(&self) -> Option<(GatewayId, Timestamp, f64, f64)> {
        self.gateways.iter().find_map(|g| match g.regimes.as_slice() {
            [first, second, ..] if second.sr_percent < first.sr_percent => Some((
                GatewayId::new(&g.id).ok()?,
                Timestamp((second.start_s * 1000.0).round() as u64),
                first.sr_percent,
                second.sr_percent,
            )),
            _ => None,
        })
    }
}
