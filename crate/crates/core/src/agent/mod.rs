//! The experiment agent: think, act and observe over a seeded workspace
//! until Final Answer, budget exhaustion, abort or an infrastructure fault.

mod dispatch;
mod prompt;
mod run;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::idea::ResearchIdea;
use crate::toolkit::{DatasetCandidate, ModelCandidate, TaskPackage, ToolkitError};
use crate::workspace::ExecutionPolicy;

pub use dispatch::{Dispatch, Toolbox, SUBMIT_ONCE_NOTICE};
pub use prompt::{agent_instructions, build_step_prompt, research_problem, PromptInputs, DEFAULT_PROMPT_BUDGET};
pub use run::{handle_request_help, run_loop, AgentEnv, HelpReply, STEP_TEMPLATE_ID};

pub const DEFAULT_STEP_BUDGET: u64 = 50;
pub const DEFAULT_TURN_RETRIES: u32 = 2;
pub const DEFAULT_FEEDBACK_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("step budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Package(#[from] ToolkitError),
    #[error("{0}")]
    Fault(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Completed { answer: String },
    BudgetExhausted,
    Aborted,
    Failed { reason: String },
}

impl Outcome {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Self::Running)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Running => "running",
            Self::Completed { .. } => "completed",
            Self::BudgetExhausted => "budget_exhausted",
            Self::Aborted => "aborted",
            Self::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub step_index: u64,
    pub plan_status: String,
    pub awaiting_feedback: bool,
    #[serde(default)]
    pub paused: bool,
    pub outcome: Outcome,
}

impl RunState {
    pub fn new(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            step_index: 0,
            plan_status: String::new(),
            awaiting_feedback: false,
            paused: false,
            outcome: Outcome::Running,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub idea: ResearchIdea,
    pub task_package: PathBuf,
    pub step_budget: u64,
    /// Re-asks allowed for a malformed turn before the step is consumed.
    pub retry_budget: u32,
    pub policy: ExecutionPolicy,
    pub provider: String,
    pub trial_seed: u64,
    #[serde(with = "secs")]
    pub feedback_timeout: Duration,
    /// Characters available to the step prompt.
    pub prompt_budget: usize,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(Duration::from_secs_f64)
    }
}

impl RunConfig {
    pub fn new(idea: ResearchIdea, task_package: PathBuf, provider: impl Into<String>) -> Self {
        Self {
            idea,
            task_package,
            step_budget: DEFAULT_STEP_BUDGET,
            retry_budget: DEFAULT_TURN_RETRIES,
            policy: ExecutionPolicy::default(),
            provider: provider.into(),
            trial_seed: 0,
            feedback_timeout: DEFAULT_FEEDBACK_TIMEOUT,
            prompt_budget: DEFAULT_PROMPT_BUDGET,
        }
    }

    /// Checks the budget and loads the task package.
    pub fn validate(&self) -> Result<TaskPackage, AgentError> {
        if self.step_budget == 0 {
            return Err(AgentError::ZeroBudget);
        }
        self.policy.validate().map_err(|e| AgentError::Fault(e.to_string()))?;
        Ok(TaskPackage::load(&self.task_package)?)
    }

    /// Hex SHA-256 of the configuration with the seed and package path left out.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("trial_seed");
            map.remove("task_package");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// What the agent has assembled so far: the code, and optionally a
/// retrieved model and dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentalSetup {
    pub code: PathBuf,
    pub model: Option<ModelCandidate>,
    pub dataset: Option<DatasetCandidate>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::idea::tests::sample_idea;

    #[test]
    fn outcome_serializes_with_status_tag() {
        let v = serde_json::to_value(Outcome::Completed { answer: "a".into() }).unwrap();
        assert_eq!(v, serde_json::json!({"status": "completed", "answer": "a"}));
        assert!(Outcome::Aborted.is_terminal());
        assert!(!Outcome::Running.is_terminal());
    }

    #[test]
    fn config_validation_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(sample_idea(), dir.path().to_path_buf(), "scripted");
        assert!(matches!(cfg.validate(), Err(AgentError::Package(_))));
        cfg.step_budget = 0;
        assert!(matches!(cfg.validate(), Err(AgentError::ZeroBudget)));
        let a = cfg.digest();
        cfg.trial_seed = 7;
        assert_eq!(a, cfg.digest());
        cfg.step_budget = 3;
        assert_ne!(a, cfg.digest());
        assert_eq!(a.len(), 64);
    }
}
