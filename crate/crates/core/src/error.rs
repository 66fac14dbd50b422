use thiserror::Error;

use crate::domain::{GatewayId, Timestamp};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate dimension field `{0}`")]
    DuplicateDimensionField(String),

    #[error("dimension field `{0}` is not in the configured schema")]
    UnknownDimensionField(String),

    #[error("malformed dimension key `{0}`")]
    MalformedDimensionKey(String),

    #[error("identifier must be non-empty")]
    EmptyIdentifier,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("out-of-order record at {at} ms (newest entry at {newest} ms)")]
    OutOfOrder { at: Timestamp, newest: Timestamp },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("no eligible gateway")]
    NoEligibleGateway,

    #[error("exploration budget m*e = {budget} must be below 1 (m = {gateways})")]
    ExplorationBudget { budget: f64, gateways: usize },

    #[error("gateway {0} is not part of the decision")]
    UnknownGateway(GatewayId),

    #[error("{attempts} attempt results exceed the allowed budget of {allowed}")]
    TooManyAttempts { attempts: usize, allowed: usize },

    #[error("transaction `{0}` is already registered")]
    DuplicateTransaction(String),

    #[error("configuration `{0}` is not registered")]
    UnknownConfiguration(String),

    #[error("strategy `{0}` is not registered")]
    UnknownStrategy(String),

    #[error("reward factor {0} is not below 1; widen sigma or narrow the SR gap")]
    RewardFactorTooLarge(f64),

    #[error("threshold unreachable by mean decay (k*sqrt(a/(2-a)) = {0} >= 1)")]
    ThresholdUnreachable(f64),

    #[error("replay log: {0}")]
    Replay(String),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
