#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use mlr_core::agent::RunConfig;
use mlr_core::clock::LogicalClock;
use mlr_core::corpus::{load_paper_dir, StubLiterature, DEFAULT_CONTEXT_BUDGET, DEFAULT_RECENT_WORKS};
use mlr_core::harness::{run_trial, TrialEnv, TrialReport};
use mlr_core::idea::{generate_idea, IdeaFile, ResearchIdea};
use mlr_core::llm::{Gateway, RetryPolicy, ScriptedProvider, DEFAULT_TOKEN_BUDGET};
use mlr_core::store::RunStore;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn toy_task() -> PathBuf {
    fixtures().join("tasks/toy-linear")
}

pub fn scripted(path: &std::path::Path) -> Arc<Gateway> {
    let provider = ScriptedProvider::from_file(path).expect("session loads");
    Arc::new(Gateway::with_limits(Arc::new(provider), RetryPolicy::immediate(0), DEFAULT_TOKEN_BUDGET))
}

/// Runs the idea pipeline on the bundled paper and returns the idea file text.
pub fn fixture_idea_json() -> String {
    let paper = load_paper_dir(&fixtures().join("papers/student-feedback")).expect("paper loads").paper;
    let literature = StubLiterature::from_file(&fixtures().join("literature/student-feedback.jsonl")).expect("literature loads");
    let llm = scripted(&fixtures().join("sessions/idea-student-feedback.toml"));
    let idea = generate_idea(paper, &llm, &literature, DEFAULT_RECENT_WORKS, DEFAULT_CONTEXT_BUDGET).expect("idea generated");
    IdeaFile::new(idea, llm.provider_id()).to_json()
}

pub fn fixture_idea() -> ResearchIdea {
    IdeaFile::from_json(&fixture_idea_json(), "fixture").unwrap().idea()
}

pub fn toy_config(idea: ResearchIdea) -> RunConfig {
    let mut cfg = RunConfig::new(idea, toy_task(), "scripted");
    cfg.step_budget = 10;
    cfg
}

pub fn toy_trial(store: Arc<RunStore>) -> TrialReport {
    let llm = scripted(&toy_task().join("fixtures/agent-session.toml"));
    run_trial(
        &toy_config(fixture_idea()),
        TrialEnv {
            store,
            llm,
            clock: Arc::new(LogicalClock::new(LogicalClock::DEFAULT_ORIGIN_MS, 1)),
            model_hub: None,
            dataset_hub: None,
        },
    )
    .expect("trial runs")
}
