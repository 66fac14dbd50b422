//! Run manifest: everything replay needs to rebuild the score spaces.

use serde::{Deserialize, Serialize};

use routepilot_core::feedback::FeedbackLoop;
use routepilot_core::scores::{ScoreSpace, ScoreStore};
use routepilot_core::window::ScoreRule;
use routepilot_core::{ConfigurationId, FeedbackConfig, Timestamp};

use crate::run::RunOutput;
use crate::scenario::{ResolvedArm, Scenario, SCHEMA_VERSION};
use crate::SimError;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub seed: u64,
    pub command: Vec<String>,
    /// Virtual time final scores are evaluated at, in milliseconds.
    pub end_ms: u64,
    pub feedback: FeedbackConfig,
    pub score_rule: ScoreRule,
    pub arms: Vec<ResolvedArm>,
    pub outputs: Vec<String>,
    pub scenario: Scenario,
}

impl Manifest {
    pub fn new(
        scenario: &Scenario,
        seed: u64,
        command: Vec<String>,
        output: &RunOutput,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            artifact_version: ARTIFACT_VERSION.to_string(),
            seed,
            command,
            end_ms: output.metrics.end.as_millis(),
            feedback: scenario.feedback,
            score_rule: scenario.score_rule,
            arms: output.arms.clone(),
            outputs,
            scenario: scenario.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(SimError::scenario(
                "schema_version",
                format!("{} is not supported (expected {SCHEMA_VERSION})", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn end(&self) -> Timestamp {
        Timestamp(self.end_ms)
    }

    /// An empty feedback loop with the run's score-space parameters.
    pub fn feedback_loop(&self) -> Result<FeedbackLoop, SimError> {
        let mut store = ScoreStore::new();
        for a in &self.arms {
            store.insert(
                ConfigurationId::new(&a.id)?,
                ScoreSpace::new(a.exploration.clone(), a.downtime.clone(), self.score_rule),
            );
        }
        Ok(FeedbackLoop::new(self.feedback, store).with_journal())
    }
}
