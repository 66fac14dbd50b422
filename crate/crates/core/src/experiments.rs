//! Experiment arms: sticky equal-split assignment and arm comparison.

use std::collections::BTreeSet;
use std::io;

use serde::Serialize;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::domain::{ConfigurationId, DowntimeParams, ExplorationParams, TxnId};
use crate::engine::StrategyOptions;
use crate::error::{invalid, Result};

/// One configuration under test.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSpec {
    pub id: ConfigurationId,
    /// Registry name of the routing strategy.
    pub strategy: String,
    pub options: StrategyOptions,
    pub exploration: Option<ExplorationParams>,
    pub downtime: Option<DowntimeParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    arms: Vec<ArmSpec>,
}

impl ExperimentPlan {
    pub fn new(arms: Vec<ArmSpec>) -> Result<Self> {
        if arms.is_empty() {
            return Err(invalid("plan", "needs at least one arm"));
        }
        let mut seen = BTreeSet::new();
        for a in &arms {
            if !seen.insert(&a.id) {
                return Err(invalid("plan", format!("duplicate arm `{}`", a.id)));
            }
        }
        Ok(Self { arms })
    }

    pub fn arms(&self) -> &[ArmSpec] {
        &self.arms
    }

    /// Equal share per arm.
    pub fn split(&self) -> f64 {
        1.0 / self.arms.len() as f64
    }

    pub fn assign_arm(&self, txn: &TxnId, seed: u64) -> &ConfigurationId {
        &self.arms[arm_index(txn, seed, self.arms.len())].id
    }
}

/// Arm index for `txn`: a pure function of the id, the seed and the arm
/// count.
pub fn arm_index(txn: &TxnId, seed: u64, arms: usize) -> usize {
    let h = xxh3_64_with_seed(txn.as_str().as_bytes(), seed);
    ((u128::from(h) * arms as u128) >> 64) as usize
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GatewayTally {
    pub gateway: String,
    /// Transactions that ended on this gateway.
    pub txns: u64,
    pub successes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmMetrics {
    pub arm: String,
    pub dimension: String,
    pub txns: u64,
    pub successes: u64,
    pub gateways: Vec<GatewayTally>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmRow {
    pub arm: String,
    pub dimension: String,
    pub txn_count: u64,
    pub sr_percent: Option<f64>,
    pub traffic_share_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GatewayRow {
    pub arm: String,
    pub gateway: String,
    pub sr_percent: Option<f64>,
    pub traffic_share_percent: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmReport {
    pub arms: Vec<ArmRow>,
    pub gateways: Vec<GatewayRow>,
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Arms by SR descending (empty arms last), gateways in arm order.
pub fn compare_arms(metrics: &[ArmMetrics]) -> ArmReport {
    let total: u64 = metrics.iter().map(|m| m.txns).sum();
    let mut order: Vec<&ArmMetrics> = metrics.iter().collect();
    order.sort_by(|a, b| {
        let (sa, sb) = (percent(a.successes, a.txns), percent(b.successes, b.txns));
        sb.partial_cmp(&sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.arm.cmp(&b.arm))
    });
    let mut report = ArmReport::default();
    for m in order {
        report.arms.push(ArmRow {
            arm: m.arm.clone(),
            dimension: m.dimension.clone(),
            txn_count: m.txns,
            sr_percent: percent(m.successes, m.txns),
            traffic_share_percent: percent(m.txns, total).unwrap_or(0.0),
        });
        for g in &m.gateways {
            report.gateways.push(GatewayRow {
                arm: m.arm.clone(),
                gateway: g.gateway.clone(),
                sr_percent: percent(g.successes, g.txns),
                traffic_share_percent: percent(g.txns, m.txns).unwrap_or(0.0),
            });
        }
    }
    report
}

/// Fixed six-decimal rendering; `None` is an empty field.
pub fn fmt6(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl ArmReport {
    pub fn write_arms_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["arm", "dimension", "txn_count", "sr_percent", "traffic_share_percent"])?;
        for r in &self.arms {
            w.write_record([
                r.arm.clone(),
                r.dimension.clone(),
                r.txn_count.to_string(),
                fmt6(r.sr_percent),
                fmt6(Some(r.traffic_share_percent)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_gateways_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["arm", "gateway", "sr_percent", "traffic_share_percent"])?;
        for r in &self.gateways {
            w.write_record([
                r.arm.clone(),
                r.gateway.clone(),
                fmt6(r.sr_percent),
                fmt6(Some(r.traffic_share_percent)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
