//! Per-configuration score spaces.
//!
//! Every experiment arm owns a [`ScoreSpace`]: its SR windows and health
//! scores keyed by `(dimension, gateway)`, plus the parameters that drive
//! them. Nothing in one space is reachable from another.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;

use crate::domain::{
    ConfigurationId, DimensionKey, DowntimeParams, ExplorationParams, GatewayId, OutcomeStatus,
    Timestamp,
};
use crate::downtime::HealthScore;
use crate::error::{Error, Result};
use crate::window::{ScoreRule, SlidingWindow};

pub type ScoreKey = (DimensionKey, GatewayId);

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSpace {
    exploration: Option<ExplorationParams>,
    downtime: Option<DowntimeParams>,
    dimension_exploration: BTreeMap<DimensionKey, ExplorationParams>,
    dimension_downtime: BTreeMap<DimensionKey, DowntimeParams>,
    rule: ScoreRule,
    windows: BTreeMap<ScoreKey, SlidingWindow>,
    health: BTreeMap<ScoreKey, HealthScore>,
}

/// What routing sees of one gateway.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatewayView {
    pub sr: f64,
    /// `None` when the space has no downtime parameters.
    pub health: Option<HealthScore>,
    /// Latched DOWN, or UP with a score already below the threshold.
    pub down: bool,
    /// Score below threshold while still latched UP; the controller commits it.
    pub newly_down: bool,
}

impl ScoreSpace {
    pub fn new(
        exploration: Option<ExplorationParams>,
        downtime: Option<DowntimeParams>,
        rule: ScoreRule,
    ) -> Self {
        Self {
            exploration,
            downtime,
            dimension_exploration: BTreeMap::new(),
            dimension_downtime: BTreeMap::new(),
            rule,
            windows: BTreeMap::new(),
            health: BTreeMap::new(),
        }
    }

    /// Overrides the parameters for one dimension.
    pub fn set_dimension_params(
        &mut self,
        dimension: DimensionKey,
        exploration: Option<ExplorationParams>,
        downtime: Option<DowntimeParams>,
    ) {
        if let Some(p) = exploration {
            self.dimension_exploration.insert(dimension.clone(), p);
        }
        if let Some(p) = downtime {
            self.dimension_downtime.insert(dimension, p);
        }
    }

    pub fn exploration(&self, dimension: &DimensionKey) -> Option<&ExplorationParams> {
        self.dimension_exploration
            .get(dimension)
            .or(self.exploration.as_ref())
    }

    pub fn downtime(&self, dimension: &DimensionKey) -> Option<&DowntimeParams> {
        self.dimension_downtime.get(dimension).or(self.downtime.as_ref())
    }

    pub fn rule(&self) -> &ScoreRule {
        &self.rule
    }

    pub fn window(&self, dimension: &DimensionKey, gateway: &GatewayId) -> Option<&SlidingWindow> {
        self.windows.get(&(dimension.clone(), gateway.clone()))
    }

    pub fn windows(&self) -> impl Iterator<Item = (&ScoreKey, &SlidingWindow)> {
        self.windows.iter()
    }

    pub fn health(&self, dimension: &DimensionKey, gateway: &GatewayId) -> Option<&HealthScore> {
        self.health.get(&(dimension.clone(), gateway.clone()))
    }

    pub fn health_scores(&self) -> impl Iterator<Item = (&ScoreKey, &HealthScore)> {
        self.health.iter()
    }

    /// SR score at `now`; stale entries are skipped, not evicted.
    pub fn sr_score(&self, dimension: &DimensionKey, gateway: &GatewayId, now: Timestamp) -> f64 {
        match (self.window(dimension, gateway), self.exploration(dimension)) {
            (Some(w), Some(p)) => w.score_at(now, p.max_window_age, &self.rule),
            (Some(w), None) => w.score(&self.rule),
            (None, _) => self.rule.cold_start,
        }
    }

    pub fn view(&self, dimension: &DimensionKey, gateway: &GatewayId, now: Timestamp) -> GatewayView {
        let sr = self.sr_score(dimension, gateway, now);
        let Some(params) = self.downtime(dimension) else {
            return GatewayView {
                sr,
                health: None,
                down: false,
                newly_down: false,
            };
        };
        let health = self
            .health(dimension, gateway)
            .copied()
            .unwrap_or_else(|| HealthScore::new(Timestamp::ZERO));
        let newly_down = !health.is_down() && health.value < params.threshold;
        GatewayView {
            sr,
            health: Some(health),
            down: health.is_down() || newly_down,
            newly_down,
        }
    }

    /// Appends an outcome to the window, creating it on first use and
    /// evicting stale entries.
    pub(crate) fn record_sr(
        &mut self,
        dimension: &DimensionKey,
        gateway: &GatewayId,
        status: OutcomeStatus,
        at: Timestamp,
    ) -> Result<()> {
        let params = self
            .exploration(dimension)
            .cloned()
            .ok_or_else(|| crate::error::invalid("exploration", "space has no SR windows"))?;
        let window = match self.windows.entry((dimension.clone(), gateway.clone())) {
            std::collections::btree_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(SlidingWindow::new(params.window_size)?)
            }
        };
        window.record_outcome(status, at)?;
        window.evict_stale(at, params.max_window_age);
        Ok(())
    }

    /// Health score for mutation, or `None` when downtime is disabled.
    pub(crate) fn health_mut(
        &mut self,
        dimension: &DimensionKey,
        gateway: &GatewayId,
    ) -> Option<(&mut HealthScore, DowntimeParams)> {
        let params = self.downtime(dimension)?.clone();
        let score = self
            .health
            .entry((dimension.clone(), gateway.clone()))
            .or_insert_with(|| HealthScore::new(Timestamp::ZERO));
        Some((score, params))
    }
}

/// All score spaces, one per configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreStore {
    spaces: BTreeMap<ConfigurationId, ScoreSpace>,
}

impl ScoreStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, config: ConfigurationId, space: ScoreSpace) {
        self.spaces.insert(config, space);
    }

    pub fn space(&self, config: &ConfigurationId) -> Result<&ScoreSpace> {
        self.spaces
            .get(config)
            .ok_or_else(|| Error::UnknownConfiguration(config.to_string()))
    }

    pub fn space_mut(&mut self, config: &ConfigurationId) -> Result<&mut ScoreSpace> {
        self.spaces
            .get_mut(config)
            .ok_or_else(|| Error::UnknownConfiguration(config.to_string()))
    }

    pub fn spaces(&self) -> impl Iterator<Item = (&ConfigurationId, &ScoreSpace)> {
        self.spaces.iter()
    }

    pub(crate) fn spaces_mut(&mut self) -> impl Iterator<Item = (&ConfigurationId, &mut ScoreSpace)> {
        self.spaces.iter_mut()
    }

    /// Final per-gateway scores, one row per `(config, dimension, gateway)`
    /// with either a window or a health score.
    pub fn final_scores(&self, now: Timestamp) -> Vec<FinalScore> {
        let mut rows = Vec::new();
        for (config, space) in &self.spaces {
            let mut keys: Vec<&ScoreKey> = space.windows.keys().collect();
            keys.extend(space.health.keys());
            keys.sort();
            keys.dedup();
            for (dimension, gateway) in keys {
                let window = space.window(dimension, gateway);
                let health = space.health(dimension, gateway);
                rows.push(FinalScore {
                    config: config.to_string(),
                    dimension: dimension.to_string(),
                    gateway: gateway.to_string(),
                    sr_score: space.sr_score(dimension, gateway, now),
                    window_len: window.map_or(0, SlidingWindow::len),
                    window_successes: window.map_or(0, SlidingWindow::success_count),
                    health: health.map(|h| h.value),
                    state: health.map(|h| h.state.as_str()),
                });
            }
        }
        rows
    }

    /// Window contents as `(dimension, config, gateway, timestamp, status)` rows.
    pub fn write_windows_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dimension", "config", "gateway", "timestamp", "status"])?;
        for (config, space) in &self.spaces {
            for ((dimension, gateway), window) in &space.windows {
                for e in window.iter() {
                    w.write_record([
                        dimension.as_str(),
                        config.as_str(),
                        gateway.as_str(),
                        &e.at.as_millis().to_string(),
                        e.status.as_str(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalScore {
    pub config: String,
    pub dimension: String,
    pub gateway: String,
    pub sr_score: f64,
    pub window_len: usize,
    pub window_successes: usize,
    pub health: Option<f64>,
    pub state: Option<&'static str>,
}
