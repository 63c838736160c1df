mod common;

use std::sync::Arc;

use mlr_core::agent::Outcome;
use mlr_core::evaluation::DEFAULT_SUCCESS_THRESHOLD;
use mlr_core::idea::IdeaFile;
use mlr_core::store::{EventKind, RunStore};

#[test]
fn idea_generation_is_byte_identical_across_invocations() {
    let runs: Vec<String> = (0..3).map(|_| common::fixture_idea_json()).collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
    let file = IdeaFile::from_json(&runs[0], "run").unwrap();
    assert_eq!(
        file.hypothesis.title(),
        "Advanced Aspect-Level Sentiment Analysis of Student Feedback Using a Hybrid Deep Learning Approach"
    );
    let stages: Vec<&str> = file.plan.design.iter().map(|s| s.title()).collect();
    assert_eq!(stages.len(), 9);
    assert_eq!(stages[0], "Dataset Preparation");
    assert_eq!(stages[8], "Deployment");
    let keywords = &file.context.frame.keywords;
    assert!(keywords.iter().any(|k| k == "Student Feedback Corpus"));
    assert!(keywords.iter().any(|k| k == "Aspect Terms"));
    assert_eq!(file.related[0].source_id, "lit-dtlp");
}

#[test]
fn toy_trial_improves_the_metric() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    let report = common::toy_trial(store.clone());
    assert!(matches!(report.state.outcome, Outcome::Completed { .. }), "{:?}", report.state.outcome);
    let improvement = report.result.improvement().unwrap().expect("both measurements present");
    assert!(improvement >= 10.0, "improvement {improvement}");
    assert!(report.result.succeeded(DEFAULT_SUCCESS_THRESHOLD).unwrap());

    let events = store.events(&report.run_id, 1).unwrap();
    let actions: Vec<&str> = events
        .iter()
        .filter(|e| e.kind == EventKind::Action)
        .map(|e| e.payload["name"].as_str().unwrap())
        .collect();
    assert_eq!(actions, ["Inspect Script Lines", "Execute Script", "Edit Script (AI)", "Execute Script", "Final Answer"]);
    let baseline = std::fs::read_to_string(store.run_dir(&report.run_id).join("baseline/train.py")).unwrap();
    assert!(baseline.contains("LEARNING_RATE = 0.0005"));
}

#[test]
fn identical_trials_write_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    let a = common::toy_trial(store.clone());
    let b = common::toy_trial(store.clone());
    assert_ne!(a.run_id, b.run_id);
    let read = |id: &str| std::fs::read(store.trace_path(id)).unwrap();
    assert_eq!(read(&a.run_id), read(&b.run_id));
}
