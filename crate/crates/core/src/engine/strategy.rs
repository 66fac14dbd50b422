use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::{assign_exploration, order_gateways, Ranking, RoutingContext};
use crate::domain::GatewayId;
use crate::error::{invalid, Error, Result};

/// One way of ranking the eligible gateways of a transaction.
pub trait RoutingStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Whether the strategy reads SR windows, and so needs exploration
    /// parameters in its score space.
    fn needs_exploration(&self) -> bool {
        false
    }

    /// Ranks `eligible` (non-empty). An exploration target, if any, must be
    /// ranked first.
    fn rank(
        &self,
        eligible: &[GatewayId],
        ctx: &RoutingContext,
        rng: &mut dyn RngCore,
    ) -> Result<Ranking>;
}

/// Per-arm options handed to a strategy factory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrategyOptions {
    /// Static preference, most preferred first.
    pub priority: Vec<GatewayId>,
}

pub type StrategyFactory =
    Arc<dyn Fn(&StrategyOptions) -> Result<Box<dyn RoutingStrategy>> + Send + Sync>;

/// Strategies by name.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    factories: BTreeMap<String, StrategyFactory>,
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `dynamic`, `rule-based` and `random`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Dynamic::NAME, |_| Ok(Box::new(Dynamic)));
        r.register(RuleBased::NAME, |o| Ok(Box::new(RuleBased::new(o.priority.clone()))));
        r.register(RandomSplit::NAME, |_| Ok(Box::new(RandomSplit)));
        r
    }

    /// Adds or replaces a factory.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&StrategyOptions) -> Result<Box<dyn RoutingStrategy>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Arc::new(factory));
    }

    pub fn build(&self, name: &str, options: &StrategyOptions) -> Result<Box<dyn RoutingStrategy>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy(name.to_owned()))?;
        factory(options)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

/// SR-ordered routing with per-gateway exploration.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dynamic;

impl Dynamic {
    pub const NAME: &'static str = "dynamic";
}

impl RoutingStrategy for Dynamic {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn needs_exploration(&self) -> bool {
        true
    }

    fn rank(
        &self,
        eligible: &[GatewayId],
        ctx: &RoutingContext,
        rng: &mut dyn RngCore,
    ) -> Result<Ranking> {
        let factor = ctx
            .exploration
            .as_ref()
            .map(|p| p.factor)
            .ok_or_else(|| invalid("exploration", "dynamic routing needs exploration params"))?;
        let up: Vec<GatewayId> = eligible
            .iter()
            .filter(|g| !ctx.is_down(g))
            .cloned()
            .collect();
        let target = assign_exploration(eligible.len(), &up, factor, rng)?;
        let mut gateways = order_gateways(eligible, |g| ctx.sr(g), |g| ctx.is_down(g));
        if let Some(t) = &target {
            let at = gateways.iter().position(|g| g == t).expect("target is eligible");
            let t = gateways.remove(at);
            gateways.insert(0, t);
        }
        Ok(Ranking {
            gateways,
            explore_target: target,
        })
    }
}

/// Fixed merchant priority; ignores every score. Gateways missing from the
/// priority list follow in id order.
#[derive(Clone, Debug, Default)]
pub struct RuleBased {
    priority: Vec<GatewayId>,
}

impl RuleBased {
    pub const NAME: &'static str = "rule-based";

    pub fn new(priority: Vec<GatewayId>) -> Self {
        Self { priority }
    }
}

impl RoutingStrategy for RuleBased {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn rank(
        &self,
        eligible: &[GatewayId],
        _ctx: &RoutingContext,
        _rng: &mut dyn RngCore,
    ) -> Result<Ranking> {
        let mut gateways = eligible.to_vec();
        gateways.sort_by_key(|g| {
            let rank = self.priority.iter().position(|p| p == g).unwrap_or(usize::MAX);
            (rank, g.clone())
        });
        Ok(Ranking {
            gateways,
            explore_target: None,
        })
    }
}

/// Uniformly random order per transaction.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomSplit;

impl RandomSplit {
    pub const NAME: &'static str = "random";
}

impl RoutingStrategy for RandomSplit {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn rank(
        &self,
        eligible: &[GatewayId],
        _ctx: &RoutingContext,
        rng: &mut dyn RngCore,
    ) -> Result<Ranking> {
        let mut gateways = eligible.to_vec();
        gateways.shuffle(rng);
        Ok(Ranking {
            gateways,
            explore_target: None,
        })
    }
}
