//! Routing, initiation and feedback wired together over one score store.

use rand::RngCore;

use crate::domain::{FeedbackConfig, GatewayId, Timestamp, TxnId};
use crate::engine::{
    cascade, route, AttemptResult, CascadeOutcome, RoutingContext, RoutingDecision,
    RoutingRequest, RoutingStrategy, StrategyRegistry,
};
use crate::error::{invalid, Result};
use crate::experiments::ExperimentPlan;
use crate::feedback::{Applied, FeedbackEvent, FeedbackLoop, PendingTransaction, TimeoutReport};
use crate::scores::{ScoreSpace, ScoreStore};
use crate::window::ScoreRule;

#[derive(Debug)]
pub struct Controller {
    plan: ExperimentPlan,
    strategies: Vec<Box<dyn RoutingStrategy>>,
    feedback: FeedbackLoop,
    seed: u64,
}

/// A decision plus the gateways whose DOWN transition it committed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routed {
    pub decision: RoutingDecision,
    pub detected: Vec<GatewayId>,
}

impl Controller {
    pub fn new(
        plan: ExperimentPlan,
        registry: &StrategyRegistry,
        feedback: FeedbackConfig,
        rule: ScoreRule,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ScoreStore::new();
        let mut strategies = Vec::with_capacity(plan.arms().len());
        for arm in plan.arms() {
            let s = registry.build(&arm.strategy, &arm.options)?;
            if s.needs_exploration() && arm.exploration.is_none() {
                return Err(invalid(
                    "exploration",
                    format!("arm `{}` uses `{}` but has no exploration params", arm.id, s.name()),
                ));
            }
            strategies.push(s);
            store.insert(
                arm.id.clone(),
                ScoreSpace::new(arm.exploration.clone(), arm.downtime.clone(), rule),
            );
        }
        Ok(Self {
            plan,
            strategies,
            feedback: FeedbackLoop::new(feedback, store),
            seed,
        })
    }

    pub fn with_journal(mut self) -> Self {
        self.feedback = self.feedback.with_journal();
        self
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    pub fn feedback_loop(&self) -> &FeedbackLoop {
        &self.feedback
    }

    pub fn feedback_loop_mut(&mut self) -> &mut FeedbackLoop {
        &mut self.feedback
    }

    pub fn assign_arm(&self, txn: &TxnId) -> &crate::domain::ConfigurationId {
        self.plan.assign_arm(txn, self.seed)
    }

    fn arm_index(&self, req: &RoutingRequest) -> Result<usize> {
        self.plan
            .arms()
            .iter()
            .position(|a| a.id == req.configuration)
            .ok_or_else(|| crate::error::Error::UnknownConfiguration(req.configuration.to_string()))
    }

    /// Snapshot of the request's score space restricted to its candidates.
    pub fn context(&self, req: &RoutingRequest, now: Timestamp) -> Result<RoutingContext> {
        let space = self.feedback.store().space(&req.configuration)?;
        Ok(RoutingContext {
            views: req
                .candidates
                .iter()
                .map(|g| (g.clone(), space.view(&req.dimension, g, now)))
                .collect(),
            exploration: space.exploration(&req.dimension).cloned(),
            downtime_enabled: space.downtime(&req.dimension).is_some(),
            cold_start: space.rule().cold_start,
        })
    }

    /// Commits pending DOWN transitions among the candidates, then ranks.
    pub fn route(
        &mut self,
        req: &RoutingRequest,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<Routed> {
        let arm = self.arm_index(req)?;
        let ctx = self.context(req, now)?;
        let mut detected = Vec::new();
        for (g, v) in &ctx.views {
            if v.newly_down
                && self
                    .feedback
                    .detect(&req.configuration, &req.dimension, g, now)?
            {
                detected.push(g.clone());
            }
        }
        let decision = route(self.strategies[arm].as_ref(), req, &ctx, rng)?;
        Ok(Routed { decision, detected })
    }

    /// Runs the cascade: every failed attempt is journaled and penalized;
    /// the gateway that initiates becomes a pending transaction.
    pub fn initiate(
        &mut self,
        decision: &RoutingDecision,
        results: &[AttemptResult],
        max_retries: usize,
        now: Timestamp,
    ) -> Result<CascadeOutcome> {
        let out = cascade(decision, results, max_retries)?;
        for a in &out.attempts {
            match a.result {
                AttemptResult::InitFail => {
                    self.feedback.register_init_failure(
                        &decision.txn,
                        &a.gateway,
                        &decision.dimension,
                        &decision.configuration,
                        a.explored,
                        now,
                    )?;
                }
                AttemptResult::InitOk => {
                    let p = PendingTransaction::new(
                        decision.txn.clone(),
                        a.gateway.clone(),
                        decision.dimension.clone(),
                        decision.configuration.clone(),
                        a.explored,
                        now,
                        self.feedback.config(),
                    );
                    self.feedback.register_initiation(p)?;
                }
            }
        }
        Ok(out)
    }

    pub fn submit_feedback(&mut self, ev: &FeedbackEvent) -> Result<Applied> {
        self.feedback.submit_feedback(ev)
    }

    pub fn tick(&mut self, now: Timestamp) -> Result<TimeoutReport> {
        self.feedback.apply_timeouts(now)
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::domain::{
        ConfigurationId, DimensionKey, DowntimeParams, ExplorationParams, OutcomeStatus,
        DEFAULT_MAX_WINDOW_AGE,
    };
    use crate::engine::StrategyOptions;
    use crate::experiments::ArmSpec;

    fn gw(s: &str) -> GatewayId {
        GatewayId::new(s).unwrap()
    }

    fn controller(strategy: &str, exploration: bool) -> Result<Controller> {
        let arm = ArmSpec {
            id: ConfigurationId::new("A").unwrap(),
            strategy: strategy.into(),
            options: StrategyOptions {
                priority: vec![gw("G1"), gw("G2")],
            },
            exploration: exploration
                .then(|| ExplorationParams::new(0.1, 100, DEFAULT_MAX_WINDOW_AGE).unwrap()),
            downtime: Some(DowntimeParams::new(0.2, 0.6, 3.0, Duration::from_secs(300)).unwrap()),
        };
        Controller::new(
            ExperimentPlan::new(vec![arm]).unwrap(),
            &StrategyRegistry::with_builtins(),
            FeedbackConfig::default(),
            ScoreRule::default(),
            0,
        )
    }

    fn req(i: u64) -> RoutingRequest {
        RoutingRequest::new(
            TxnId::new(format!("t{i}")).unwrap(),
            DimensionKey::global(),
            vec![gw("G1"), gw("G2")],
            1,
            ConfigurationId::new("A").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn dynamic_without_exploration_rejected() {
        assert!(controller("dynamic", false).is_err());
        assert!(controller("rule-based", false).is_ok());
        assert!(controller("nope", true).is_err());
    }

    #[test]
    fn failover_after_detection() {
        let mut c = controller("rule-based", false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut detected_at = None;
        for i in 0..6 {
            let now = Timestamp::from_secs(i);
            c.tick(now).unwrap();
            let r = c.route(&req(i), now, &mut rng).unwrap();
            if !r.detected.is_empty() {
                assert_eq!(r.detected, [gw("G1")]);
                detected_at = Some(i);
            }
            let out = c
                .initiate(&r.decision, &[AttemptResult::InitOk], 1, now)
                .unwrap();
            if detected_at.is_some() {
                assert_eq!(out.final_gateway, Some(gw("G2")));
            }
            c.submit_feedback(&FeedbackEvent {
                txn: r.decision.txn.clone(),
                kind: OutcomeStatus::Failure,
                at: now,
            })
            .unwrap();
        }
        // 0.8^3 = 0.512 < 0.6, seen on the fourth routing
        assert_eq!(detected_at, Some(3));
    }

    #[test]
    fn cascade_through_controller() {
        let mut c = controller("rule-based", false).unwrap().with_journal();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = c.route(&req(0), Timestamp(0), &mut rng).unwrap();
        let out = c
            .initiate(&r.decision, &[AttemptResult::InitFail, AttemptResult::InitOk], 1, Timestamp(0))
            .unwrap();
        assert_eq!(out.final_gateway, Some(gw("G2")));
        assert_eq!(c.feedback_loop().journal().unwrap().len(), 2);
        assert!(c.feedback_loop().is_pending(&r.decision.txn));
    }
}
