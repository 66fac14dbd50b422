//! Closed-loop payment routing: sliding-window SR scoring, explore/exploit
//! gateway ordering, and health-score downtime detection driven by delayed
//! transaction feedback.

pub mod controller;
pub mod domain;
pub mod downtime;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod optimizer;
pub mod replay;
pub mod scores;
pub mod window;

pub use controller::{Controller, Routed};
pub use domain::{
    canonical_key, Clock, ConfigurationId, DimensionKey, DimensionSchema, DowntimeParams,
    ExplorationParams, FeedbackConfig, GatewayId, OutcomeStatus, SystemClock, Timestamp,
    TransactionOutcome, TxnId,
};
pub use error::{Error, Result};
