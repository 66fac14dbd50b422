//! Pre-transaction decisions: eligibility, exploration, ranking and
//! cascading retries.

mod strategy;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

pub use strategy::{
    Dynamic, RandomSplit, RoutingStrategy, RuleBased, StrategyFactory, StrategyOptions,
    StrategyRegistry,
};

use crate::domain::{ConfigurationId, DimensionKey, ExplorationParams, GatewayId, TxnId};
use crate::error::{invalid, Error, Result};
use crate::scores::GatewayView;

/// Merchant eligibility filter.
pub type Eligibility = Arc<dyn Fn(&GatewayId) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct RoutingRequest {
    pub txn: TxnId,
    pub dimension: DimensionKey,
    pub candidates: Vec<GatewayId>,
    pub eligibility: Option<Eligibility>,
    pub max_retries: usize,
    pub configuration: ConfigurationId,
}

impl fmt::Debug for RoutingRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoutingRequest")
            .field("txn", &self.txn)
            .field("dimension", &self.dimension)
            .field("candidates", &self.candidates)
            .field("filtered", &self.eligibility.is_some())
            .field("max_retries", &self.max_retries)
            .field("configuration", &self.configuration)
            .finish()
    }
}

impl RoutingRequest {
    pub fn new(
        txn: TxnId,
        dimension: DimensionKey,
        candidates: Vec<GatewayId>,
        max_retries: usize,
        configuration: ConfigurationId,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(invalid("candidates", "empty gateway list"));
        }
        if max_retries >= candidates.len() {
            return Err(invalid(
                "max retries",
                format!("{max_retries} must be below the {} candidates", candidates.len()),
            ));
        }
        Ok(Self {
            txn,
            dimension,
            candidates,
            eligibility: None,
            max_retries,
            configuration,
        })
    }

    pub fn with_eligibility(mut self, f: Eligibility) -> Self {
        self.eligibility = Some(f);
        self
    }
}

/// Score snapshot a strategy ranks against.
#[derive(Clone, Debug, Default)]
pub struct RoutingContext {
    pub views: BTreeMap<GatewayId, GatewayView>,
    pub exploration: Option<ExplorationParams>,
    /// Whether DOWN gateways are pushed behind UP ones.
    pub downtime_enabled: bool,
    pub cold_start: f64,
}

impl RoutingContext {
    pub fn sr(&self, g: &GatewayId) -> f64 {
        self.views.get(g).map_or(self.cold_start, |v| v.sr)
    }

    pub fn is_down(&self, g: &GatewayId) -> bool {
        self.downtime_enabled && self.views.get(g).is_some_and(|v| v.down)
    }
}

/// A strategy's output before downtime reordering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    pub gateways: Vec<GatewayId>,
    pub explore_target: Option<GatewayId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingDecision {
    pub txn: TxnId,
    pub ordered: Vec<GatewayId>,
    pub explored: bool,
    pub explore_target: Option<GatewayId>,
    pub configuration: ConfigurationId,
    pub dimension: DimensionKey,
}

impl RoutingDecision {
    /// Whether an attempt on `g` counts as exploration.
    pub fn explores(&self, g: &GatewayId) -> bool {
        self.explore_target.as_ref() == Some(g)
    }
}

/// Candidates passing the merchant predicate, in candidate order.
pub fn filter_eligible(req: &RoutingRequest) -> Result<Vec<GatewayId>> {
    let eligible: Vec<GatewayId> = match &req.eligibility {
        Some(f) => req.candidates.iter().filter(|g| f(g)).cloned().collect(),
        None => req.candidates.clone(),
    };
    if eligible.is_empty() {
        return Err(Error::NoEligibleGateway);
    }
    Ok(eligible)
}

/// Decides whether a transaction explores and on which gateway.
///
/// With `m` eligible gateways the transaction explores with probability
/// `m·factor` and picks a target uniformly from `up`. Two uniforms are drawn
/// on every call so the random stream does not depend on the outcome.
pub fn assign_exploration(
    m: usize,
    up: &[GatewayId],
    factor: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<GatewayId>> {
    let budget = m as f64 * factor;
    if !(factor >= 0.0) || budget >= 1.0 {
        return Err(Error::ExplorationBudget {
            budget,
            gateways: m,
        });
    }
    let u_explore: f64 = rng.random();
    let u_target: f64 = rng.random();
    if m < 2 || up.is_empty() || u_explore >= budget {
        return Ok(None);
    }
    let i = ((u_target * up.len() as f64) as usize).min(up.len() - 1);
    Ok(Some(up[i].clone()))
}

/// UP gateways by SR descending, then DOWN gateways by SR descending; ties
/// go to the smaller id.
pub fn order_gateways(
    eligible: &[GatewayId],
    score: impl Fn(&GatewayId) -> f64,
    is_down: impl Fn(&GatewayId) -> bool,
) -> Vec<GatewayId> {
    let mut keyed: Vec<(bool, f64, &GatewayId)> = eligible
        .iter()
        .map(|g| (is_down(g), score(g), g))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.2.cmp(b.2))
    });
    keyed.into_iter().map(|(_, _, g)| g.clone()).collect()
}

/// Full decision for one transaction.
pub fn route(
    strategy: &dyn RoutingStrategy,
    req: &RoutingRequest,
    ctx: &RoutingContext,
    rng: &mut dyn RngCore,
) -> Result<RoutingDecision> {
    let eligible = filter_eligible(req)?;
    let Ranking {
        mut gateways,
        explore_target,
    } = strategy.rank(&eligible, ctx, rng)?;
    if ctx.downtime_enabled {
        // stable: keeps the strategy's order within each group
        let (up, down): (Vec<_>, Vec<_>) = gateways.into_iter().partition(|g| !ctx.is_down(g));
        gateways = up;
        gateways.extend(down);
    }
    debug_assert!(is_permutation(&gateways, &eligible));
    debug_assert!(explore_target.is_none() || gateways.first() == explore_target.as_ref());
    Ok(RoutingDecision {
        txn: req.txn.clone(),
        explored: explore_target.is_some(),
        ordered: gateways,
        explore_target,
        configuration: req.configuration.clone(),
        dimension: req.dimension.clone(),
    })
}

fn is_permutation(a: &[GatewayId], b: &[GatewayId]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttemptResult {
    InitOk,
    InitFail,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attempt {
    pub gateway: GatewayId,
    pub explored: bool,
    pub result: AttemptResult,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CascadeOutcome {
    /// First gateway that initiated, if any did within the retry budget.
    pub final_gateway: Option<GatewayId>,
    /// Gateways whose initiation failed, in attempt order.
    pub failures: Vec<GatewayId>,
    pub attempts: Vec<Attempt>,
}

/// Walks the ranked list with the given initiation results.
pub fn cascade(
    decision: &RoutingDecision,
    results: &[AttemptResult],
    max_retries: usize,
) -> Result<CascadeOutcome> {
    let allowed = (max_retries + 1).min(decision.ordered.len());
    if results.len() > allowed {
        return Err(Error::TooManyAttempts {
            attempts: results.len(),
            allowed,
        });
    }
    let mut out = CascadeOutcome {
        final_gateway: None,
        failures: Vec::new(),
        attempts: Vec::with_capacity(results.len()),
    };
    for (i, (g, &r)) in decision.ordered.iter().zip(results).enumerate() {
        out.attempts.push(Attempt {
            gateway: g.clone(),
            explored: decision.explores(g),
            result: r,
        });
        match r {
            AttemptResult::InitFail => out.failures.push(g.clone()),
            AttemptResult::InitOk => {
                if i + 1 != results.len() {
                    return Err(invalid("attempt results", "results continue after INIT_OK"));
                }
                out.final_gateway = Some(g.clone());
            }
        }
    }
    Ok(out)
}
