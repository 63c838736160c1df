mod common;

use std::sync::Arc;

use mlr_core::harness::render_transcript;
use mlr_core::store::RunStore;

#[test]
fn finished_trace_restreams_identically() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    let report = common::toy_trial(store.clone());
    let stored = store.events(&report.run_id, 1).unwrap();
    let streamed: Vec<_> = store.stream(&report.run_id, 1).unwrap().map(Result::unwrap).collect();
    assert_eq!(stored, streamed);
    let again: Vec<_> = store.stream(&report.run_id, 1).unwrap().map(Result::unwrap).collect();
    assert_eq!(streamed, again);
    let tail: Vec<_> = store.stream(&report.run_id, 6).unwrap().map(Result::unwrap).collect();
    assert_eq!(tail, stored[5..]);

    let reopened = RunStore::open(dir.path()).unwrap();
    let from_disk = reopened.events(&report.run_id, 1).unwrap();
    assert_eq!(from_disk, stored);
    let transcript = render_transcript(&from_disk);
    assert_eq!(transcript, render_transcript(&reopened.events(&report.run_id, 1).unwrap()));
    assert_eq!(transcript.matches("=== Step").count(), 5);
}
