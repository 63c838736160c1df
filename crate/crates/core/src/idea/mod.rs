//! Stage 1: hypothesis and experiment-plan generation, and the idea file.

mod generate;
mod parse;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, PromptContext, RelatedWork};
use crate::llm::GatewayError;

pub use generate::{
    generate_hypothesis, generate_idea, generate_plan, hypothesis_prompt, plan_prompt, refine_idea, render_related,
    HYPOTHESIS_TEMPLATE_ID, PLAN_TEMPLATE_ID,
};
pub use parse::{parse_hypothesis, parse_plan, split_stages};

pub const IDEA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IdeaError {
    #[error("could not parse response: {0}")]
    Parse(String),
    #[error("experiment plan contains no numbered stages")]
    EmptyPlan,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid idea file {path}: {detail}")]
    Format { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub method: String,
    pub rationale: String,
}

impl Hypothesis {
    /// First line of the method text.
    pub fn title(&self) -> &str {
        self.method.lines().next().unwrap_or("").trim()
    }

    pub fn render(&self) -> String {
        format!("Method: {}\n\nRationale: {}\n", self.method, self.rationale)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStage {
    pub number: u32,
    pub text: String,
}

impl PlanStage {
    /// First line of the stage without its trailing colon.
    pub fn title(&self) -> &str {
        let first = self.text.lines().next().unwrap_or("").trim();
        first.strip_suffix(':').unwrap_or(first).trim()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Full text under the `Experiment:` header.
    pub experiment: String,
    pub design: Vec<PlanStage>,
    pub rationale: String,
    /// The response the plan was parsed from.
    pub raw: String,
}

impl ExperimentPlan {
    pub fn render(&self) -> String {
        format!("Experiment: {}\n\nRationale: {}\n", self.experiment, self.rationale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchIdea {
    pub context: PromptContext,
    pub related: Vec<RelatedWork>,
    pub hypothesis: Hypothesis,
    pub plan: ExperimentPlan,
}

pub fn assemble_idea(
    context: PromptContext,
    related: Vec<RelatedWork>,
    hypothesis: Hypothesis,
    plan: ExperimentPlan,
) -> ResearchIdea {
    ResearchIdea {
        context,
        related,
        hypothesis,
        plan,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateIds {
    pub hypothesis: String,
    pub plan: String,
}

impl Default for TemplateIds {
    fn default() -> Self {
        Self {
            hypothesis: HYPOTHESIS_TEMPLATE_ID.into(),
            plan: PLAN_TEMPLATE_ID.into(),
        }
    }
}

/// On-disk idea document: the idea plus the prompt versions and provider
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeaFile {
    pub format_version: u32,
    pub templates: TemplateIds,
    pub provider_id: String,
    pub context: PromptContext,
    pub related: Vec<RelatedWork>,
    pub hypothesis: Hypothesis,
    pub plan: ExperimentPlan,
}

impl IdeaFile {
    pub fn new(idea: ResearchIdea, provider_id: impl Into<String>) -> Self {
        Self {
            format_version: IDEA_FORMAT_VERSION,
            templates: TemplateIds::default(),
            provider_id: provider_id.into(),
            context: idea.context,
            related: idea.related,
            hypothesis: idea.hypothesis,
            plan: idea.plan,
        }
    }

    pub fn idea(&self) -> ResearchIdea {
        ResearchIdea {
            context: self.context.clone(),
            related: self.related.clone(),
            hypothesis: self.hypothesis.clone(),
            plan: self.plan.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("idea file serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, IdeaError> {
        let file: IdeaFile = serde_json::from_str(text).map_err(|e| IdeaError::Format {
            path: origin.to_string(),
            detail: e.to_string(),
        })?;
        if file.format_version != IDEA_FORMAT_VERSION {
            return Err(IdeaError::Format {
                path: origin.to_string(),
                detail: format!("unsupported format_version {}", file.format_version),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), IdeaError> {
        std::fs::write(path, self.to_json()).map_err(|source| IdeaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IdeaError> {
        let text = std::fs::read_to_string(path).map_err(|source| IdeaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}
