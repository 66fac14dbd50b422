//! The event loop.
//!
//! One virtual-time queue ordered by `(time, class, sequence)` where ticks
//! run before feedback and feedback before arrivals at equal times. Ticks
//! call `apply_timeouts` every virtual second.
//!
//! Randomness is split so runs that differ only in routing still see the same
//! world. Transaction `i` owns two ChaCha8 streams under the run seed:
//! stream `2i` draws the outcome uniform `u`, then `max_retries + 1`
//! initiation uniforms, then one standard normal for latency; stream `2i+1`
//! is handed to the routing engine. The transaction succeeds on gateway `g`
//! iff `u < SR_g(t)`. Arrivals draw from their own stream.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::Serialize;

use routepilot_core::engine::{AttemptResult, RoutingRequest, StrategyRegistry};
use routepilot_core::experiments::arm_index;
use routepilot_core::feedback::{Disposition, FeedbackEvent, JournalRow};
use routepilot_core::scores::{FinalScore, ScoreStore};
use routepilot_core::{
    Controller, DimensionKey, GatewayId, OutcomeStatus, Timestamp, TxnId,
};

use crate::metrics::{ArmStats, DowntimeEvent, GatewayStats, RunMetrics, TimeseriesRow};
use crate::scenario::{plan_of, Arrivals, ResolvedArm, Scenario};
use crate::SimError;

const ARRIVAL_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub seed: u64,
    /// Keep the feedback journal (needed for replay).
    pub journal: bool,
    /// Count initiations on this gateway from this time until its first
    /// DOWN detection at or after it.
    pub watch: Option<(GatewayId, Timestamp)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WatchReport {
    pub arm: String,
    pub detected_at: Option<Timestamp>,
    /// Initiations on the watched gateway before detection.
    pub attempts: u64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub arms: Vec<ResolvedArm>,
    pub final_scores: Vec<FinalScore>,
    pub store: ScoreStore,
    pub journal: Option<Vec<JournalRow>>,
    pub watch: Vec<WatchReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Tick,
    Feedback { idx: u64, success: bool },
    Arrival,
}

impl Event {
    fn class(self) -> u8 {
        match self {
            Self::Tick => 0,
            Self::Feedback { .. } => 1,
            Self::Arrival => 2,
        }
    }
}

struct InFlight {
    txn: TxnId,
    arm: usize,
    gateway: usize,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    arms: Vec<ResolvedArm>,
    ctl: Controller,
    seed: u64,
    base: ChaCha8Rng,
    dimension: DimensionKey,
    gateway_ids: Vec<GatewayId>,
    gateway_index: HashMap<GatewayId, usize>,
    queue: BinaryHeap<Reverse<(u64, u8, u64, Event)>>,
    seq: u64,
    in_flight: HashMap<u64, InFlight>,
    stats: Vec<ArmStats>,
    buckets: BTreeMap<(u64, usize), (u64, u64)>,
    downtime: Vec<DowntimeEvent>,
    open_down: BTreeMap<(usize, usize), usize>,
    watch: Option<(usize, Timestamp)>,
    watch_reports: Vec<WatchReport>,
    arrivals_done: bool,
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, cfg: &RunConfig) -> Result<Self, SimError> {
        scenario.validate()?;
        let arms = scenario.resolve_arms()?;
        let plan = plan_of(&arms)?;
        let mut ctl = Controller::new(
            plan,
            &StrategyRegistry::with_builtins(),
            scenario.feedback,
            scenario.score_rule,
            cfg.seed,
        )?;
        if cfg.journal {
            ctl = ctl.with_journal();
        }
        let gateway_ids = scenario.gateway_ids()?;
        let gateway_index: HashMap<_, _> =
            gateway_ids.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        let watch = match &cfg.watch {
            Some((g, tau)) => Some((
                *gateway_index
                    .get(g)
                    .ok_or_else(|| SimError::scenario("watch", format!("unknown gateway `{g}`")))?,
                *tau,
            )),
            None => None,
        };
        let stats = arms
            .iter()
            .map(|a| ArmStats {
                arm: a.id.clone(),
                gateways: scenario
                    .gateways
                    .iter()
                    .map(|g| GatewayStats {
                        gateway: g.id.clone(),
                        ..GatewayStats::default()
                    })
                    .collect(),
                ..ArmStats::default()
            })
            .collect();
        let watch_reports = arms
            .iter()
            .map(|a| WatchReport {
                arm: a.id.clone(),
                detected_at: None,
                attempts: 0,
            })
            .collect();
        Ok(Self {
            scenario,
            arms,
            ctl,
            seed: cfg.seed,
            base: ChaCha8Rng::seed_from_u64(cfg.seed),
            dimension: scenario.dimension_key()?,
            gateway_ids,
            gateway_index,
            queue: BinaryHeap::new(),
            seq: 0,
            in_flight: HashMap::new(),
            stats,
            buckets: BTreeMap::new(),
            downtime: Vec::new(),
            open_down: BTreeMap::new(),
            watch,
            watch_reports,
            arrivals_done: false,
        })
    }

    fn push(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, ev.class(), self.seq, ev)));
    }

    fn stream(&self, n: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(n);
        r
    }

    fn arrival_times(&self) -> Vec<u64> {
        let horizon_ms = self.scenario.horizon_s * 1000.0;
        let to_ms = |t: f64| (t * 1000.0).round();
        let mut out = Vec::new();
        match self.scenario.arrivals {
            Arrivals::Fixed => {
                let mut i = 0u64;
                loop {
                    let t = to_ms(i as f64 / self.scenario.tps);
                    if t >= horizon_ms {
                        break;
                    }
                    out.push(t as u64);
                    i += 1;
                }
            }
            Arrivals::Poisson => {
                let mut rng = self.stream(ARRIVAL_STREAM);
                let exp = Exp::new(self.scenario.tps).expect("validated tps");
                let mut t = 0.0;
                loop {
                    t += rng.sample(exp);
                    let ms = to_ms(t);
                    if ms >= horizon_ms {
                        break;
                    }
                    out.push(ms as u64);
                }
            }
        }
        out
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        let arrivals = self.arrival_times();
        let mut next_arrival = 0usize;
        if let Some(&t) = arrivals.first() {
            self.push(t, Event::Arrival);
        } else {
            self.arrivals_done = true;
        }
        self.push(0, Event::Tick);
        let mut end = 0;
        while let Some(Reverse((at, _, _, ev))) = self.queue.pop() {
            end = at;
            let now = Timestamp(at);
            match ev {
                Event::Tick => {
                    self.tick(now)?;
                    if !self.arrivals_done
                        || !self.in_flight.is_empty()
                        || self.ctl.feedback_loop().pending_len() > 0
                    {
                        self.push(at + 1000, Event::Tick);
                    }
                }
                Event::Feedback { idx, success } => self.feedback(idx, success, now)?,
                Event::Arrival => {
                    self.arrive(next_arrival as u64, now)?;
                    next_arrival += 1;
                    match arrivals.get(next_arrival) {
                        Some(&t) => self.push(t, Event::Arrival),
                        None => self.arrivals_done = true,
                    }
                }
            }
        }
        self.finish(Timestamp(end))
    }

    fn tick(&mut self, now: Timestamp) -> Result<(), SimError> {
        let report = self.ctl.tick(now)?;
        for (config, _, g) in report.revived {
            let arm = self.arm_of(config.as_str());
            let gw = self.gateway_index[&g];
            if let Some(i) = self.open_down.remove(&(arm, gw)) {
                self.downtime[i].recovered_at = Some(now);
            }
        }
        Ok(())
    }

    fn arm_of(&self, id: &str) -> usize {
        self.arms.iter().position(|a| a.id == id).expect("known arm")
    }

    fn arrive(&mut self, idx: u64, now: Timestamp) -> Result<(), SimError> {
        let max_retries = self.scenario.max_retries;
        let txn = TxnId::new(format!("t{idx}"))?;
        let arm = arm_index(&txn, self.seed, self.arms.len());
        let config = self.ctl.plan().arms()[arm].id.clone();

        let mut outcome_rng = self.stream(idx << 1);
        let u: f64 = outcome_rng.random();
        let init_u: Vec<f64> = (0..=max_retries).map(|_| outcome_rng.random()).collect();
        let z: f64 = outcome_rng.sample(StandardNormal);
        let mut routing_rng = self.stream((idx << 1) | 1);

        let req = RoutingRequest::new(
            txn.clone(),
            self.dimension.clone(),
            self.gateway_ids.clone(),
            max_retries,
            config,
        )?;
        let routed = self.ctl.route(&req, now, &mut routing_rng)?;
        let decision = routed.decision;

        for g in &routed.detected {
            let gw = self.gateway_index[g];
            self.open_down.insert((arm, gw), self.downtime.len());
            self.downtime.push(DowntimeEvent {
                arm: self.arms[arm].id.clone(),
                gateway: g.to_string(),
                detected_at: now,
                recovered_at: None,
                rerouted: 0,
            });
            if let Some((w, tau)) = self.watch {
                let report = &mut self.watch_reports[arm];
                if w == gw && now >= tau && report.detected_at.is_none() {
                    report.detected_at = Some(now);
                }
            }
        }
        let first = self.gateway_index[&decision.ordered[0]];
        for (&(a, gw), &i) in &self.open_down {
            if a == arm && gw != first {
                self.downtime[i].rerouted += 1;
            }
        }

        let mut results = Vec::with_capacity(max_retries + 1);
        for (g, v) in decision.ordered.iter().zip(&init_u) {
            let model = &self.scenario.gateways[self.gateway_index[g]];
            if *v < model.init_fail_prob {
                results.push(AttemptResult::InitFail);
            } else {
                results.push(AttemptResult::InitOk);
                break;
            }
        }
        let out = self.ctl.initiate(&decision, &results, max_retries, now)?;

        let t = now.as_secs_f64();
        let bucket = (t / self.scenario.timeseries_bucket_s).floor() as u64;
        let stats = &mut self.stats[arm];
        stats.txns += 1;
        if let Some(target) = &decision.explore_target {
            stats.gateways[self.gateway_index[target]].explored += 1;
        }
        for a in &out.attempts {
            let gw = self.gateway_index[&a.gateway];
            let g = &mut stats.gateways[gw];
            g.attempts += 1;
            if a.result == AttemptResult::InitFail {
                g.init_failures += 1;
            }
            if let Some((w, tau)) = self.watch {
                let report = &mut self.watch_reports[arm];
                if w == gw && now >= tau && report.detected_at.is_none() {
                    report.attempts += 1;
                }
            }
        }
        let cell = self.buckets.entry((bucket, arm)).or_default();
        cell.0 += 1;
        let Some(final_gw) = out.final_gateway else {
            // lands on the last gateway it tried
            let last = out.attempts.last().expect("at least one attempt");
            let g = &mut stats.gateways[self.gateway_index[&last.gateway]];
            g.txns += 1;
            g.failed += 1;
            stats.init_exhausted += 1;
            stats.failed += 1;
            return Ok(());
        };
        let gw = self.gateway_index[&final_gw];
        let model = &self.scenario.gateways[gw];
        let success = u < model.sr_at(t);
        let latency = if success {
            model.success_latency.sample(z)
        } else {
            model.failure_latency.sample(z)
        };
        stats.gateways[gw].txns += 1;
        if success {
            stats.successes += 1;
            stats.gateways[gw].successes += 1;
            cell.1 += 1;
        }
        self.in_flight.insert(idx, InFlight { txn, arm, gateway: gw });
        let at = now.as_millis() + (latency * 1000.0).round() as u64;
        self.push(at, Event::Feedback { idx, success });
        Ok(())
    }

    fn feedback(&mut self, idx: u64, success: bool, now: Timestamp) -> Result<(), SimError> {
        let f = self.in_flight.remove(&idx).expect("in-flight transaction");
        let kind = if success {
            OutcomeStatus::Success
        } else {
            OutcomeStatus::Failure
        };
        let applied = self.ctl.submit_feedback(&FeedbackEvent {
            txn: f.txn,
            kind,
            at: now,
        })?;
        let arm = &mut self.stats[f.arm];
        let g = &mut arm.gateways[f.gateway];
        match (applied.disposition, success) {
            (Disposition::OnTime, true) => {
                arm.succeeded += 1;
                g.succeeded += 1;
            }
            (Disposition::OnTime, false) => {
                arm.failed += 1;
                g.failed += 1;
            }
            _ => {
                arm.timed_out += 1;
                g.timed_out += 1;
            }
        }
        Ok(())
    }

    fn finish(mut self, end: Timestamp) -> Result<RunOutput, SimError> {
        let bucket_s = self.scenario.timeseries_bucket_s;
        let timeseries = self
            .buckets
            .iter()
            .map(|(&(b, arm), &(txns, successes))| TimeseriesRow {
                bucket_start_s: b as f64 * bucket_s,
                arm: self.arms[arm].id.clone(),
                txns,
                successes,
            })
            .collect();
        let journal = self.ctl.feedback_loop_mut().take_journal();
        let fl = self.ctl.feedback_loop();
        let metrics = RunMetrics {
            dimension: self.dimension.to_string(),
            arms: self.stats,
            timeseries,
            downtime: self.downtime,
            counters: *fl.counters(),
            end,
        };
        Ok(RunOutput {
            metrics,
            final_scores: fl.store().final_scores(end),
            store: fl.store().clone(),
            journal,
            arms: self.arms,
            watch: self.watch_reports,
        })
    }
}

/// Runs `scenario` to completion: arrivals stop at the horizon and the queue
/// drains until no transaction is pending.
pub fn run(scenario: &Scenario, cfg: &RunConfig) -> Result<RunOutput, SimError> {
    Sim::new(scenario, cfg)?.run()
}

/// Detection figures for one arm of a downtime case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DowntimeArmCase {
    pub arm: String,
    pub detected_at: Option<Timestamp>,
    /// Initiations on the dropped gateway from the drop until detection.
    pub txns_to_detect: Option<u64>,
    pub seconds_to_detect: Option<f64>,
    /// Detections before the drop or on other gateways.
    pub spurious: u64,
    /// Transactions moved off the dropped gateway while it was DOWN.
    pub rerouted: u64,
}

#[derive(Debug)]
pub struct DowntimeCase {
    pub gateway: GatewayId,
    pub tau: Timestamp,
    pub sr1: f64,
    pub sr2: f64,
    pub arms: Vec<DowntimeArmCase>,
    pub output: RunOutput,
}

/// Runs a scenario in which exactly one gateway drops its SR once.
pub fn run_downtime_case(scenario: &Scenario, seed: u64) -> Result<DowntimeCase, SimError> {
    let drops: Vec<_> = scenario
        .gateways
        .iter()
        .filter(|g| g.regimes.len() > 1)
        .collect();
    if drops.len() != 1 || drops[0].regimes.len() != 2 {
        return Err(SimError::scenario(
            "gateways",
            "a downtime case needs exactly one gateway with one regime change",
        ));
    }
    let (gateway, tau, sr1, sr2) = scenario.drop_point().ok_or_else(|| {
        SimError::scenario("gateways", "the regime change must lower the SR")
    })?;
    let output = run(
        scenario,
        &RunConfig {
            seed,
            journal: false,
            watch: Some((gateway.clone(), tau)),
        },
    )?;
    let arms = output
        .watch
        .iter()
        .map(|w| {
            let events = output.metrics.downtime.iter().filter(|e| e.arm == w.arm);
            let (mut spurious, mut rerouted) = (0, 0);
            for e in events {
                if e.gateway != gateway.as_str() || e.detected_at < tau {
                    spurious += 1;
                } else {
                    rerouted += e.rerouted;
                }
            }
            DowntimeArmCase {
                arm: w.arm.clone(),
                detected_at: w.detected_at,
                txns_to_detect: w.detected_at.map(|_| w.attempts),
                seconds_to_detect: w.detected_at.map(|d| d.since(tau).as_secs_f64()),
                spurious,
                rerouted,
            }
        })
        .collect();
    Ok(DowntimeCase {
        gateway,
        tau,
        sr1,
        sr2,
        arms,
        output,
    })
}
