//! Per-decision cost with 16 warm gateways.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use routepilot_core::engine::{AttemptResult, RoutingRequest, StrategyOptions, StrategyRegistry};
use routepilot_core::experiments::{ArmSpec, ExperimentPlan};
use routepilot_core::feedback::FeedbackEvent;
use routepilot_core::window::ScoreRule;
use routepilot_core::{
    ConfigurationId, Controller, DimensionKey, DowntimeParams, ExplorationParams, FeedbackConfig,
    GatewayId, OutcomeStatus, Timestamp, TxnId,
};

const GATEWAYS: usize = 16;

fn controller() -> Controller {
    let arm = ArmSpec {
        id: ConfigurationId::new("A").unwrap(),
        strategy: "dynamic".into(),
        options: StrategyOptions::default(),
        exploration: Some(ExplorationParams::new(0.05, 1000, Duration::from_secs(7200)).unwrap()),
        downtime: Some(DowntimeParams::new(0.01, 0.2, 3.0, Duration::from_secs(300)).unwrap()),
    };
    Controller::new(
        ExperimentPlan::new(vec![arm]).unwrap(),
        &StrategyRegistry::with_builtins(),
        FeedbackConfig::default(),
        ScoreRule::default(),
        7,
    )
    .unwrap()
}

#[test]
fn p99_route_under_five_ms() {
    let gws: Vec<GatewayId> = (0..GATEWAYS)
        .map(|i| GatewayId::new(format!("G{i}")).unwrap())
        .collect();
    let mut c = controller();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = Vec::new();
    for i in 0..30_000u64 {
        let now = Timestamp(i * 100);
        let req = RoutingRequest::new(
            TxnId::new(format!("t{i}")).unwrap(),
            DimensionKey::global(),
            gws.clone(),
            2,
            ConfigurationId::new("A").unwrap(),
        )
        .unwrap();
        let t = Instant::now();
        let r = c.route(&req, now, &mut rng).unwrap();
        let took = t.elapsed();
        if i >= 20_000 {
            samples.push(took);
        }
        c.initiate(&r.decision, &[AttemptResult::InitOk], 2, now).unwrap();
        let kind = if i % 5 == 0 {
            OutcomeStatus::Failure
        } else {
            OutcomeStatus::Success
        };
        c.submit_feedback(&FeedbackEvent {
            txn: r.decision.txn,
            kind,
            at: now,
        })
        .unwrap();
        if i % 10 == 0 {
            c.tick(now).unwrap();
        }
    }
    samples.sort();
    let p99 = samples[samples.len() * 99 / 100];
    println!("route p99 over {} decisions: {p99:?}", samples.len());
    assert!(p99 <= Duration::from_millis(5), "p99 {p99:?}");
}
