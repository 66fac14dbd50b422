//! Fixed-capacity, recency-bounded window of exploration outcomes.
//!
//! The window keeps the last `capacity` outcomes in arrival order together
//! with a running success count. Each entry also carries the cumulative
//! number of successes recorded up to and including it, so the success count
//! of any suffix is a subtraction. That lets [`SlidingWindow::score_at`]
//! apply the staleness cut without mutating the window.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{OutcomeStatus, Timestamp};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    /// Below this many retained entries the window reports `cold_start`.
    pub min_samples: usize,
    pub cold_start: f64,
}

impl Default for ScoreRule {
    fn default() -> Self {
        Self {
            min_samples: 10,
            cold_start: 1.0,
        }
    }
}

impl ScoreRule {
    pub fn new(min_samples: usize, cold_start: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cold_start) {
            return Err(invalid("cold start score", format!("{cold_start} not in [0, 1]")));
        }
        Ok(Self {
            min_samples,
            cold_start,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowEntry {
    pub at: Timestamp,
    pub status: OutcomeStatus,
    cumulative: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlidingWindow {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
    successes: usize,
    cumulative: u64,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("window capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(4096)),
            successes: 0,
            cumulative: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn success_count(&self) -> usize {
        self.successes
    }

    pub fn newest(&self) -> Option<Timestamp> {
        self.entries.back().map(|e| e.at)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WindowEntry> + '_ {
        self.entries.iter()
    }

    /// Appends an outcome, evicting the oldest entry once over capacity.
    /// Timestamps must be non-decreasing.
    pub fn record_outcome(&mut self, status: OutcomeStatus, at: Timestamp) -> Result<()> {
        if let Some(newest) = self.newest() {
            if at < newest {
                return Err(Error::OutOfOrder { at, newest });
            }
        }
        if status.is_success() {
            self.successes += 1;
            self.cumulative += 1;
        }
        self.entries.push_back(WindowEntry {
            at,
            status,
            cumulative: self.cumulative,
        });
        if self.entries.len() > self.capacity {
            self.pop_front();
        }
        Ok(())
    }

    /// Drops every entry recorded before `now - max_age`.
    pub fn evict_stale(&mut self, now: Timestamp, max_age: Duration) {
        let cutoff = now.saturating_sub(max_age);
        while self.entries.front().is_some_and(|e| e.at < cutoff) {
            self.pop_front();
        }
    }

    fn pop_front(&mut self) {
        if let Some(old) = self.entries.pop_front() {
            if old.status.is_success() {
                self.successes -= 1;
            }
        }
    }

    /// Success fraction over all retained entries.
    pub fn score(&self, rule: &ScoreRule) -> f64 {
        ratio(self.successes, self.entries.len(), rule)
    }

    /// Success fraction over entries no older than `max_age` at `now`,
    /// without evicting anything.
    pub fn score_at(&self, now: Timestamp, max_age: Duration, rule: &ScoreRule) -> f64 {
        let (successes, count) = self.fresh_counts(now, max_age);
        ratio(successes, count, rule)
    }

    fn fresh_counts(&self, now: Timestamp, max_age: Duration) -> (usize, usize) {
        let cutoff = now.saturating_sub(max_age);
        let first = self.entries.partition_point(|e| e.at < cutoff);
        let count = self.entries.len() - first;
        if count == 0 {
            return (0, 0);
        }
        let before = if first == 0 {
            // cumulative count just before the oldest retained entry
            let front = &self.entries[0];
            front.cumulative - u64::from(front.status.is_success())
        } else {
            self.entries[first - 1].cumulative
        };
        ((self.cumulative - before) as usize, count)
    }
}

fn ratio(successes: usize, count: usize, rule: &ScoreRule) -> f64 {
    if count == 0 || count < rule.min_samples {
        rule.cold_start
    } else {
        successes as f64 / count as f64
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use OutcomeStatus::{Failure as F, Success as S};

    const EAGER: ScoreRule = ScoreRule {
        min_samples: 1,
        cold_start: 1.0,
    };

    fn build(cap: usize, statuses: &[OutcomeStatus]) -> SlidingWindow {
        let mut w = SlidingWindow::new(cap).unwrap();
        for (i, s) in statuses.iter().enumerate() {
            w.record_outcome(*s, Timestamp(i as u64)).unwrap();
        }
        w
    }

    fn statuses(w: &SlidingWindow) -> Vec<OutcomeStatus> {
        w.iter().map(|e| e.status).collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut w = build(3, &[S, F, S]);
        w.record_outcome(F, Timestamp(10)).unwrap();
        assert_eq!(statuses(&w), vec![F, S, F]);
        assert_eq!(w.success_count(), 1);
    }

    #[test]
    fn under_capacity_append() {
        let mut w = SlidingWindow::new(2).unwrap();
        w.record_outcome(S, Timestamp(0)).unwrap();
        assert_eq!(statuses(&w), vec![S]);
        assert_eq!(w.success_count(), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut w = build(3, &[S, S]);
        let err = w.record_outcome(F, Timestamp(0)).unwrap_err();
        assert!(matches!(err, Error::OutOfOrder { .. }));
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(SlidingWindow::new(0).is_err());
    }

    #[test]
    fn stale_eviction() {
        let h = 3_600_000;
        let mut w = SlidingWindow::new(10).unwrap();
        for t in [0, h, 3 * h] {
            w.record_outcome(S, Timestamp(t)).unwrap();
        }
        w.evict_stale(Timestamp(3 * h), Duration::from_secs(7200));
        let times: Vec<u64> = w.iter().map(|e| e.at.0).collect();
        assert_eq!(times, vec![h, 3 * h]);
        assert_eq!(w.success_count(), 2);
    }

    #[test]
    fn fresh_window_unchanged_by_eviction() {
        let mut w = build(5, &[S, F, S]);
        let before = w.clone();
        w.evict_stale(Timestamp(3), Duration::from_secs(10));
        assert_eq!(w, before);
    }

    #[test]
    fn score_examples() {
        assert_eq!(build(4, &[S, F, S, S]).score(&EAGER), 0.75);
        let empty = SlidingWindow::new(4).unwrap();
        assert_eq!(empty.score(&ScoreRule::default()), 1.0);
    }

    #[test]
    fn cold_start_below_min_samples() {
        let w = build(1104, &[F, F, F]);
        assert_eq!(w.score(&ScoreRule::default()), 1.0);
        let w = build(1104, &[F; 10]);
        assert_eq!(w.score(&ScoreRule::default()), 0.0);
    }

    #[test]
    fn bernoulli_concentration() {
        // 3 sigma of a Binomial(500, 0.8) proportion is about 0.054
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut w = SlidingWindow::new(500).unwrap();
        for t in 0..500 {
            let s = if rng.random::<f64>() < 0.8 { S } else { F };
            w.record_outcome(s, Timestamp(t)).unwrap();
        }
        assert!((w.score(&EAGER) - 0.8).abs() <= 0.06);
    }

    #[test]
    fn random_feed_matches_suffix_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = SlidingWindow::new(37).unwrap();
        let mut all = Vec::new();
        for t in 0..1000u64 {
            let s = if rng.random::<bool>() { S } else { F };
            all.push(s);
            w.record_outcome(s, Timestamp(t)).unwrap();
            let tail = &all[all.len().saturating_sub(37)..];
            let expected = tail.iter().filter(|s| s.is_success()).count();
            assert_eq!(w.success_count(), expected);
        }
    }

    #[test]
    fn random_ages_match_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut w = SlidingWindow::new(50).unwrap();
            let mut t = 0u64;
            let mut kept = Vec::new();
            for _ in 0..rng.random_range(0..80) {
                t += rng.random_range(0..1000);
                let s = if rng.random::<bool>() { S } else { F };
                w.record_outcome(s, Timestamp(t)).unwrap();
                kept.push((t, s));
            }
            let now = t + rng.random_range(0..5000);
            let age = Duration::from_millis(rng.random_range(1..20_000));
            let cutoff = now.saturating_sub(age.as_millis() as u64);
            let tail = &kept[kept.len().saturating_sub(50)..];
            let expected: Vec<(u64, OutcomeStatus)> =
                tail.iter().copied().filter(|(at, _)| *at >= cutoff).collect();
            w.evict_stale(Timestamp(now), age);
            let got: Vec<(u64, OutcomeStatus)> = w.iter().map(|e| (e.at.0, e.status)).collect();
            assert_eq!(got, expected);
        }
    }

    fn status_strategy() -> impl Strategy<Value = OutcomeStatus> {
        prop_oneof![Just(S), Just(F)]
    }

    proptest! {
        #[test]
        fn count_invariants(
            cap in 1usize..20,
            ops in prop::collection::vec((status_strategy(), 0u64..50, any::<bool>(), 0u64..200), 0..200),
        ) {
            let mut w = SlidingWindow::new(cap).unwrap();
            let mut t = 0u64;
            for (s, dt, evict, age) in ops {
                t += dt;
                if evict {
                    w.evict_stale(Timestamp(t), Duration::from_millis(age));
                } else {
                    w.record_outcome(s, Timestamp(t)).unwrap();
                }
                let recount = w.iter().filter(|e| e.status.is_success()).count();
                prop_assert_eq!(w.success_count(), recount);
                prop_assert!(w.len() <= cap);
                let sc = w.score(&EAGER);
                prop_assert!((0.0..=1.0).contains(&sc));
            }
        }

        #[test]
        fn lazy_score_equals_evict_then_score(
            cap in 1usize..30,
            feed in prop::collection::vec((status_strategy(), 0u64..100), 0..60),
            extra in 0u64..500,
            age in 1u64..2000,
            min_samples in 0usize..5,
        ) {
            let rule = ScoreRule { min_samples, cold_start: 0.42 };
            let mut w = SlidingWindow::new(cap).unwrap();
            let mut t = 0u64;
            for (s, dt) in feed {
                t += dt;
                w.record_outcome(s, Timestamp(t)).unwrap();
            }
            let now = Timestamp(t + extra);
            let age = Duration::from_millis(age);
            let lazy = w.score_at(now, age, &rule);

            let mut evicted = w.clone();
            evicted.evict_stale(now, age);
            let mut rebuilt = SlidingWindow::new(cap).unwrap();
            for e in evicted.iter() {
                rebuilt.record_outcome(e.status, e.at).unwrap();
            }
            prop_assert_eq!(lazy, evicted.score(&rule));
            prop_assert_eq!(lazy, rebuilt.score(&rule));
        }
    }
}
