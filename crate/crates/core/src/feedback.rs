//! Post-transaction sensing.
//!
//! Every score mutation goes through [`FeedbackLoop`]: health penalizes on
//! initiation, health rewards and SR records on feedback, default penalizes
//! and closures on timeout, DOWN latching and revival. Each call that can
//! change state is appended to an optional journal, which
//! [`crate::replay`] turns back into the same calls.
//!
//! A transaction contributes at most one SR record and one health reward:
//!
//! * SUCCESS no later than the failure deadline: reward, SR SUCCESS.
//! * SUCCESS after the failure deadline but no later than the success
//!   deadline: reward; the SR record is the default FAILURE.
//! * FAILURE no later than the failure deadline: SR FAILURE.
//! * Anything later, or a FAILURE after the failure deadline: no reward; the
//!   SR record, if still missing, is the default FAILURE. Counted as late.
//!
//! Only explored transactions reach SR windows.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::domain::{
    ConfigurationId, DimensionKey, FeedbackConfig, GatewayId, OutcomeStatus, Timestamp, TxnId,
};
use crate::downtime::Revival;
use crate::error::{Error, Result};
use crate::scores::ScoreStore;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingTransaction {
    pub txn: TxnId,
    pub gateway: GatewayId,
    pub dimension: DimensionKey,
    pub configuration: ConfigurationId,
    pub explored: bool,
    pub initiated_at: Timestamp,
    pub deadline_penalize: Timestamp,
    pub deadline_reward: Timestamp,
}

impl PendingTransaction {
    pub fn new(
        txn: TxnId,
        gateway: GatewayId,
        dimension: DimensionKey,
        configuration: ConfigurationId,
        explored: bool,
        initiated_at: Timestamp,
        config: &FeedbackConfig,
    ) -> Self {
        Self {
            txn,
            gateway,
            dimension,
            configuration,
            explored,
            initiated_at,
            deadline_penalize: initiated_at.saturating_add(config.failure_timeout),
            deadline_reward: initiated_at.saturating_add(config.success_timeout),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeedbackEvent {
    pub txn: TxnId,
    pub kind: OutcomeStatus,
    pub at: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Disposition {
    OnTime,
    Late,
    /// Never registered.
    Unknown,
    /// Already closed.
    Duplicate,
}

/// Effect of one call on the scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Applied {
    pub disposition: Disposition,
    pub sr_record: Option<OutcomeStatus>,
    pub health_reward: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimeoutReport {
    /// Explored transactions that received the default SR FAILURE.
    pub default_penalized: Vec<TxnId>,
    /// Transactions closed at their success deadline.
    pub expired: Vec<TxnId>,
    pub revived: Vec<(ConfigurationId, DimensionKey, GatewayId)>,
}

impl TimeoutReport {
    pub fn is_empty(&self) -> bool {
        self.default_penalized.is_empty() && self.expired.is_empty() && self.revived.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FeedbackCounters {
    pub initiations: u64,
    pub init_failures: u64,
    pub on_time_success: u64,
    pub on_time_failure: u64,
    pub late_success: u64,
    pub late_failure: u64,
    pub unknown: u64,
    pub duplicate: u64,
    pub default_penalized: u64,
    pub expired: u64,
    pub detections: u64,
    pub revivals: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Initiate,
    InitFail,
    Success,
    Failure,
    Tick,
    Detect,
}

/// One journaled call. Identifiers are empty where they do not apply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalRow {
    pub event_type: EventKind,
    pub txn_id: String,
    pub gateway: String,
    pub dimension: String,
    pub config: String,
    pub explored: bool,
    /// Milliseconds.
    pub timestamp: u64,
}

#[derive(Clone, Debug)]
struct Entry {
    p: PendingTransaction,
    sr_settled: bool,
}

type Due = BinaryHeap<Reverse<(Timestamp, u64, TxnId)>>;

#[derive(Clone, Debug)]
pub struct FeedbackLoop {
    config: FeedbackConfig,
    store: ScoreStore,
    pending: HashMap<TxnId, Entry>,
    closed: HashSet<TxnId>,
    penalize_due: Due,
    reward_due: Due,
    seq: u64,
    clock: Timestamp,
    counters: FeedbackCounters,
    journal: Option<Vec<JournalRow>>,
}

impl FeedbackLoop {
    pub fn new(config: FeedbackConfig, store: ScoreStore) -> Self {
        Self {
            config,
            store,
            pending: HashMap::new(),
            closed: HashSet::new(),
            penalize_due: BinaryHeap::new(),
            reward_due: BinaryHeap::new(),
            seq: 0,
            clock: Timestamp::ZERO,
            counters: FeedbackCounters::default(),
            journal: None,
        }
    }

    pub fn with_journal(mut self) -> Self {
        self.journal = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &FeedbackConfig {
        &self.config
    }

    pub fn store(&self) -> &ScoreStore {
        &self.store
    }

    pub fn counters(&self) -> &FeedbackCounters {
        &self.counters
    }

    pub fn journal(&self) -> Option<&[JournalRow]> {
        self.journal.as_deref()
    }

    pub fn take_journal(&mut self) -> Option<Vec<JournalRow>> {
        self.journal.take()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_pending(&self, txn: &TxnId) -> bool {
        self.pending.contains_key(txn)
    }

    /// Latest timestamp seen.
    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    fn advance(&mut self, at: Timestamp) -> Result<()> {
        if at < self.clock {
            return Err(Error::OutOfOrder {
                at,
                newest: self.clock,
            });
        }
        self.clock = at;
        Ok(())
    }

    fn log(
        &mut self,
        event_type: EventKind,
        txn: Option<&TxnId>,
        key: Option<(&GatewayId, &DimensionKey, &ConfigurationId)>,
        explored: bool,
        at: Timestamp,
    ) {
        let Some(journal) = &mut self.journal else {
            return;
        };
        let (gateway, dimension, config) = key.map_or_else(Default::default, |(g, d, c)| {
            (g.to_string(), d.to_string(), c.to_string())
        });
        journal.push(JournalRow {
            event_type,
            txn_id: txn.map(TxnId::to_string).unwrap_or_default(),
            gateway,
            dimension,
            config,
            explored,
            timestamp: at.as_millis(),
        });
    }

    fn penalize_health(
        &mut self,
        config: &ConfigurationId,
        dimension: &DimensionKey,
        gateway: &GatewayId,
    ) -> Result<()> {
        let space = self.store.space_mut(config)?;
        if let Some((h, p)) = space.health_mut(dimension, gateway) {
            h.penalize(p.reward_factor);
        }
        Ok(())
    }

    /// Health penalize on initiation and a pending entry awaiting feedback.
    pub fn register_initiation(&mut self, p: PendingTransaction) -> Result<()> {
        if self.pending.contains_key(&p.txn) || self.closed.contains(&p.txn) {
            return Err(Error::DuplicateTransaction(p.txn.to_string()));
        }
        self.store.space(&p.configuration)?;
        self.advance(p.initiated_at)?;
        self.penalize_health(&p.configuration, &p.dimension, &p.gateway)?;
        self.counters.initiations += 1;
        self.log(
            EventKind::Initiate,
            Some(&p.txn),
            Some((&p.gateway, &p.dimension, &p.configuration)),
            p.explored,
            p.initiated_at,
        );
        self.seq += 1;
        self.penalize_due
            .push(Reverse((p.deadline_penalize, self.seq, p.txn.clone())));
        self.reward_due
            .push(Reverse((p.deadline_reward, self.seq, p.txn.clone())));
        self.pending.insert(p.txn.clone(), Entry { p, sr_settled: false });
        Ok(())
    }

    /// A cascade attempt that failed to initiate: health penalize, plus an SR
    /// FAILURE if the attempt was the exploration route.
    pub fn register_init_failure(
        &mut self,
        txn: &TxnId,
        gateway: &GatewayId,
        dimension: &DimensionKey,
        config: &ConfigurationId,
        explored: bool,
        at: Timestamp,
    ) -> Result<Applied> {
        self.store.space(config)?;
        self.advance(at)?;
        self.penalize_health(config, dimension, gateway)?;
        if explored {
            self.store
                .space_mut(config)?
                .record_sr(dimension, gateway, OutcomeStatus::Failure, at)?;
        }
        self.counters.init_failures += 1;
        self.log(
            EventKind::InitFail,
            Some(txn),
            Some((gateway, dimension, config)),
            explored,
            at,
        );
        Ok(Applied {
            disposition: Disposition::OnTime,
            sr_record: explored.then_some(OutcomeStatus::Failure),
            health_reward: false,
        })
    }

    fn default_penalize(&mut self, txn: &TxnId, at: Timestamp) -> Result<Option<OutcomeStatus>> {
        let entry = self.pending.get_mut(txn).expect("pending entry");
        if entry.sr_settled {
            return Ok(None);
        }
        entry.sr_settled = true;
        if !entry.p.explored {
            return Ok(None);
        }
        let (c, d, g) = (
            entry.p.configuration.clone(),
            entry.p.dimension.clone(),
            entry.p.gateway.clone(),
        );
        self.store
            .space_mut(&c)?
            .record_sr(&d, &g, OutcomeStatus::Failure, at)?;
        self.counters.default_penalized += 1;
        Ok(Some(OutcomeStatus::Failure))
    }

    fn close(&mut self, txn: &TxnId) {
        self.pending.remove(txn);
        self.closed.insert(txn.clone());
    }

    pub fn submit_feedback(&mut self, ev: &FeedbackEvent) -> Result<Applied> {
        self.advance(ev.at)?;
        let kind = match ev.kind {
            OutcomeStatus::Success => EventKind::Success,
            OutcomeStatus::Failure => EventKind::Failure,
        };
        let Some(entry) = self.pending.get(&ev.txn) else {
            let disposition = if self.closed.contains(&ev.txn) {
                self.counters.duplicate += 1;
                Disposition::Duplicate
            } else {
                self.counters.unknown += 1;
                Disposition::Unknown
            };
            self.log(kind, Some(&ev.txn), None, false, ev.at);
            return Ok(Applied {
                disposition,
                sr_record: None,
                health_reward: false,
            });
        };
        let p = entry.p.clone();
        let sr_settled = entry.sr_settled;
        self.log(
            kind,
            Some(&p.txn),
            Some((&p.gateway, &p.dimension, &p.configuration)),
            p.explored,
            ev.at,
        );

        let mut applied = Applied {
            disposition: Disposition::OnTime,
            sr_record: None,
            health_reward: false,
        };
        let within_penalize = ev.at <= p.deadline_penalize;
        let within_reward = ev.at <= p.deadline_reward;
        match ev.kind {
            OutcomeStatus::Success if within_reward => {
                let space = self.store.space_mut(&p.configuration)?;
                if let Some((h, params)) = space.health_mut(&p.dimension, &p.gateway) {
                    h.reward(params.reward_factor);
                    applied.health_reward = true;
                }
                if within_penalize {
                    if p.explored {
                        space.record_sr(&p.dimension, &p.gateway, OutcomeStatus::Success, ev.at)?;
                        applied.sr_record = Some(OutcomeStatus::Success);
                    }
                    self.pending.get_mut(&p.txn).expect("pending").sr_settled = true;
                } else {
                    applied.sr_record = self.default_penalize(&p.txn, ev.at)?;
                }
                self.counters.on_time_success += 1;
            }
            OutcomeStatus::Failure if within_penalize => {
                if p.explored && !sr_settled {
                    self.store.space_mut(&p.configuration)?.record_sr(
                        &p.dimension,
                        &p.gateway,
                        OutcomeStatus::Failure,
                        ev.at,
                    )?;
                    applied.sr_record = Some(OutcomeStatus::Failure);
                }
                self.counters.on_time_failure += 1;
            }
            kind => {
                applied.disposition = Disposition::Late;
                applied.sr_record = self.default_penalize(&p.txn, ev.at)?;
                if kind.is_success() {
                    self.counters.late_success += 1;
                } else {
                    self.counters.late_failure += 1;
                }
            }
        }
        self.close(&p.txn);
        Ok(applied)
    }

    /// Applies a batch in `(at, txn, kind)` order, so the result does not
    /// depend on how events with equal timestamps arrived.
    pub fn submit_batch(&mut self, mut events: Vec<FeedbackEvent>) -> Result<Vec<Applied>> {
        events.sort_by(|a, b| {
            (a.at, &a.txn, a.kind.is_success()).cmp(&(b.at, &b.txn, b.kind.is_success()))
        });
        events.iter().map(|e| self.submit_feedback(e)).collect()
    }

    /// Default penalizes for entries past their failure deadline, closure of
    /// entries past their success deadline, and revival of DOWN gateways
    /// whose interval has elapsed.
    pub fn apply_timeouts(&mut self, now: Timestamp) -> Result<TimeoutReport> {
        self.advance(now)?;
        let mut report = TimeoutReport::default();
        while let Some(Reverse((due, _, _))) = self.penalize_due.peek() {
            if *due >= now {
                break;
            }
            let Reverse((_, _, txn)) = self.penalize_due.pop().expect("peeked");
            if !self.pending.contains_key(&txn) {
                continue;
            }
            if self.default_penalize(&txn, now)?.is_some() {
                report.default_penalized.push(txn);
            }
        }
        while let Some(Reverse((due, _, _))) = self.reward_due.peek() {
            if *due >= now {
                break;
            }
            let Reverse((_, _, txn)) = self.reward_due.pop().expect("peeked");
            if self.pending.contains_key(&txn) {
                self.close(&txn);
                self.counters.expired += 1;
                report.expired.push(txn);
            }
        }
        report.revived = self.revive_due(now);
        if !report.is_empty() {
            self.log(EventKind::Tick, None, None, false, now);
        }
        Ok(report)
    }

    fn revive_due(&mut self, now: Timestamp) -> Vec<(ConfigurationId, DimensionKey, GatewayId)> {
        let mut revived = Vec::new();
        for (config, space) in self.store.spaces_mut() {
            let down: Vec<_> = space
                .health_scores()
                .filter(|(_, h)| h.is_down())
                .map(|(k, _)| k.clone())
                .collect();
            for (dimension, gateway) in down {
                let (h, p) = space.health_mut(&dimension, &gateway).expect("health exists");
                if h.revive(p.reward_factor, now, p.revival_interval) == Revival::Revived {
                    revived.push((config.clone(), dimension, gateway));
                }
            }
        }
        self.counters.revivals += revived.len() as u64;
        revived
    }

    /// Latches DOWN if the health score is below its threshold. Returns
    /// whether the state changed.
    pub fn detect(
        &mut self,
        config: &ConfigurationId,
        dimension: &DimensionKey,
        gateway: &GatewayId,
        now: Timestamp,
    ) -> Result<bool> {
        self.advance(now)?;
        let Some((h, p)) = self.store.space_mut(config)?.health_mut(dimension, gateway) else {
            return Ok(false);
        };
        if h.is_down() || !h.evaluate_state(p.threshold, now) {
            return Ok(false);
        }
        self.counters.detections += 1;
        self.log(
            EventKind::Detect,
            None,
            Some((gateway, dimension, config)),
            false,
            now,
        );
        Ok(true)
    }
}
