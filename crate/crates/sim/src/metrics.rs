//! Per-run accounting and its CSV renderings.
//!
//! Every routed transaction lands in exactly one of `succeeded` (on-time
//! SUCCESS feedback), `failed` (on-time FAILURE feedback, or every allowed
//! initiation failed) and `timed_out` (feedback after its deadline). SRs are
//! computed from the simulated truth, not from feedback timing.

use std::io;

use serde::Serialize;

use routepilot_core::experiments::{compare_arms, fmt6, ArmMetrics, ArmReport, GatewayTally};
use routepilot_core::feedback::FeedbackCounters;
use routepilot_core::Timestamp;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GatewayStats {
    pub gateway: String,
    /// Transactions that ended on this gateway, including those whose last
    /// failed initiation was here.
    pub txns: u64,
    pub successes: u64,
    /// Transactions whose exploration target was this gateway.
    pub explored: u64,
    pub attempts: u64,
    pub init_failures: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub timed_out: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ArmStats {
    pub arm: String,
    pub txns: u64,
    pub successes: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub timed_out: u64,
    /// Transactions that failed every allowed initiation.
    pub init_exhausted: u64,
    pub gateways: Vec<GatewayStats>,
}

impl ArmStats {
    pub fn sr(&self) -> Option<f64> {
        (self.txns > 0).then(|| self.successes as f64 / self.txns as f64)
    }

    pub fn gateway(&self, id: &str) -> Option<&GatewayStats> {
        self.gateways.iter().find(|g| g.gateway == id)
    }

    /// Fraction of this arm's transactions that ended on `id`.
    pub fn share(&self, id: &str) -> f64 {
        match self.gateway(id) {
            Some(g) if self.txns > 0 => g.txns as f64 / self.txns as f64,
            _ => 0.0,
        }
    }

    /// `routed = succeeded + failed + timed_out`, for the arm and each gateway.
    pub fn conserved(&self) -> bool {
        let ended: u64 = self.gateways.iter().map(|g| g.txns).sum();
        ended == self.txns
            && self.succeeded + self.failed + self.timed_out == self.txns
            && self
                .gateways
                .iter()
                .all(|g| g.succeeded + g.failed + g.timed_out == g.txns)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeseriesRow {
    pub bucket_start_s: f64,
    pub arm: String,
    pub txns: u64,
    pub successes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DowntimeEvent {
    pub arm: String,
    pub gateway: String,
    pub detected_at: Timestamp,
    pub recovered_at: Option<Timestamp>,
    /// Transactions of the arm routed while the gateway was DOWN whose first
    /// choice was another gateway.
    pub rerouted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub dimension: String,
    pub arms: Vec<ArmStats>,
    pub timeseries: Vec<TimeseriesRow>,
    pub downtime: Vec<DowntimeEvent>,
    pub counters: FeedbackCounters,
    /// Virtual time of the last processed event.
    pub end: Timestamp,
}

impl RunMetrics {
    pub fn arm(&self, id: &str) -> Option<&ArmStats> {
        self.arms.iter().find(|a| a.arm == id)
    }

    pub fn txns(&self) -> u64 {
        self.arms.iter().map(|a| a.txns).sum()
    }

    /// SR over every arm.
    pub fn overall_sr(&self) -> Option<f64> {
        let n = self.txns();
        (n > 0).then(|| self.arms.iter().map(|a| a.successes).sum::<u64>() as f64 / n as f64)
    }

    /// Fraction of all transactions that ended on `id`.
    pub fn share(&self, id: &str) -> f64 {
        let n = self.txns();
        if n == 0 {
            return 0.0;
        }
        let on: u64 = self.arms.iter().filter_map(|a| a.gateway(id)).map(|g| g.txns).sum();
        on as f64 / n as f64
    }

    pub fn conserved(&self) -> bool {
        self.arms.iter().all(ArmStats::conserved)
    }

    pub fn report(&self) -> ArmReport {
        let metrics: Vec<ArmMetrics> = self
            .arms
            .iter()
            .map(|a| ArmMetrics {
                arm: a.arm.clone(),
                dimension: self.dimension.clone(),
                txns: a.txns,
                successes: a.successes,
                gateways: a
                    .gateways
                    .iter()
                    .map(|g| GatewayTally {
                        gateway: g.gateway.clone(),
                        txns: g.txns,
                        successes: g.successes,
                    })
                    .collect(),
            })
            .collect();
        compare_arms(&metrics)
    }

    /// Arm comparison (SR descending) plus the accounting columns.
    pub fn write_metrics_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "arm",
            "dimension",
            "txn_count",
            "sr_percent",
            "traffic_share_percent",
            "succeeded",
            "failed",
            "timed_out",
            "init_exhausted",
        ])?;
        for r in &self.report().arms {
            let a = self.arm(&r.arm).expect("report arm exists");
            w.write_record([
                r.arm.clone(),
                r.dimension.clone(),
                r.txn_count.to_string(),
                fmt6(r.sr_percent),
                fmt6(Some(r.traffic_share_percent)),
                a.succeeded.to_string(),
                a.failed.to_string(),
                a.timed_out.to_string(),
                a.init_exhausted.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_gateways_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "arm",
            "gateway",
            "txn_count",
            "sr_percent",
            "traffic_share_percent",
            "explored_share_percent",
            "attempts",
            "init_failures",
            "succeeded",
            "failed",
            "timed_out",
        ])?;
        for r in &self.report().gateways {
            let a = self.arm(&r.arm).expect("report arm exists");
            let g = a.gateway(&r.gateway).expect("report gateway exists");
            let explored = (a.txns > 0).then(|| 100.0 * g.explored as f64 / a.txns as f64);
            w.write_record([
                r.arm.clone(),
                r.gateway.clone(),
                g.txns.to_string(),
                fmt6(r.sr_percent),
                fmt6(Some(r.traffic_share_percent)),
                fmt6(explored),
                g.attempts.to_string(),
                g.init_failures.to_string(),
                g.succeeded.to_string(),
                g.failed.to_string(),
                g.timed_out.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timeseries_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket_start_s", "arm", "txn_count", "sr"])?;
        for r in &self.timeseries {
            w.write_record([
                fmt6(Some(r.bucket_start_s)),
                r.arm.clone(),
                r.txns.to_string(),
                fmt6((r.txns > 0).then(|| r.successes as f64 / r.txns as f64)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_downtime_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["arm", "gateway", "detected_at_s", "recovered_at_s", "rerouted"])?;
        for e in &self.downtime {
            w.write_record([
                e.arm.clone(),
                e.gateway.clone(),
                fmt6(Some(e.detected_at.as_secs_f64())),
                fmt6(e.recovered_at.map(Timestamp::as_secs_f64)),
                e.rerouted.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_final_scores_csv<W: io::Write>(
    rows: &[routepilot_core::scores::FinalScore],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config",
        "dimension",
        "gateway",
        "sr_score",
        "window_len",
        "window_successes",
        "health",
        "state",
    ])?;
    for r in rows {
        w.write_record([
            r.config.clone(),
            r.dimension.clone(),
            r.gateway.clone(),
            fmt6(Some(r.sr_score)),
            r.window_len.to_string(),
            r.window_successes.to_string(),
            fmt6(r.health),
            r.state.unwrap_or_default().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
