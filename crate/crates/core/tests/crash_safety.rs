use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mlr_core::agent::Outcome;
use mlr_core::clock::LogicalClock;
use mlr_core::store::{EventKind, NewRun, RunStore};
use serde_json::json;

const CHILD_ENV: &str = "MLR_CRASH_WRITER_ROOT";

fn new_run() -> NewRun {
    NewRun {
        task: "crash".into(),
        provider: "none".into(),
        trial_seed: 0,
        step_budget: 1_000_000,
        config_digest: "d".into(),
    }
}

/// Body of the child process: appends events until it is killed.
fn writer(root: &Path) {
    let store = RunStore::open(root).unwrap();
    let (id, _inbox) = store.create_run(new_run(), Arc::new(LogicalClock::default())).unwrap();
    for i in 0u64.. {
        let text = "x".repeat((i % 50) as usize * 40);
        store.append_event(&id, EventKind::Observation, json!({"step": i, "text": text})).unwrap();
    }
}

#[test]
fn killed_writer_leaves_gapless_prefix() {
    if let Ok(root) = std::env::var(CHILD_ENV) {
        writer(Path::new(&root));
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(std::env::current_exe().unwrap())
        .args(["--exact", "killed_writer_leaves_gapless_prefix", "--nocapture", "--test-threads=1"])
        .env(CHILD_ENV, dir.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let run_id = loop {
        let created = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .find(|e| e.path().join("trace.log").is_file());
        if let Some(entry) = created {
            break entry.file_name().into_string().unwrap();
        }
        assert!(Instant::now() < deadline, "writer never created its run");
        std::thread::sleep(Duration::from_millis(5));
    };
    let trace = dir.path().join(&run_id).join("trace.log");
    while std::fs::metadata(&trace).map(|m| m.len()).unwrap_or(0) < 200_000 {
        assert!(Instant::now() < deadline, "writer made no progress");
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    // Simulate a torn final frame on top of whatever the kill left behind.
    let mut f = std::fs::OpenOptions::new().append(true).open(&trace).unwrap();
    f.write_all(&[200, 0, 0, 0, 1, 2, 3]).unwrap();
    drop(f);

    let store = RunStore::open(dir.path()).unwrap();
    let events = store.events(&run_id, 1).unwrap();
    assert!(events.len() > 10);
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
        assert_eq!(e.payload["step"], json!(i as u64));
    }
    let record = store.get_run(&run_id).unwrap();
    assert!(matches!(record.state.outcome, Outcome::Failed { .. }));
    assert_eq!(store.events(&run_id, 1).unwrap(), events);
}
