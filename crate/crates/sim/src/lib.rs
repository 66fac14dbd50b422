//! Discrete-event simulator: synthetic gateways driving the full
//! route → initiate → delayed feedback → timeout pipeline in virtual time.

pub mod manifest;
pub mod metrics;
pub mod run;
pub mod scenario;
pub mod sweep;

pub use manifest::Manifest;
pub use metrics::RunMetrics;
pub use run::{run, run_downtime_case, DowntimeCase, RunConfig, RunOutput};
pub use scenario::{ResolvedArm, Scenario};
pub use sweep::{sweep, SweepParam, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario: {field}: {reason}")]
    Scenario { field: String, reason: String },
    #[error("scenario: {0}")]
    Json(serde_json::Error),
    #[error(transparent)]
    Core(#[from] routepilot_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("sweep: {0}")]
    Sweep(String),
}

impl From<serde_json::Error> for SimError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json(e)
    }
}

impl SimError {
    pub(crate) fn scenario(field: &str, reason: impl Into<String>) -> Self {
        Self::Scenario {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
