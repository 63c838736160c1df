//! Run persistence: one directory per run holding an append-only trace and
//! a `run.json` record, plus the feedback and control queues of live runs.

mod trace;

use std::collections::HashMap;
use std::fs::File;
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{Outcome, RunState};
use crate::clock::{Clock, SystemClock};

pub use trace::{read_trace, EventKind, TraceCursor, TraceEvent, TraceWriter};

const TRACE_FILE: &str = "trace.log";
const RECORD_FILE: &str = "run.json";
const LOCK_FILE: &str = "run.lock";
const STREAM_POLL: Duration = Duration::from_millis(200);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("run {0} has already finished")]
    RunTerminal(String),
    #[error("run {0} is not attached to this process")]
    RunNotLive(String),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl StoreError {
    /// Machine-readable error code used by the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownRun(_) => "unknown_run",
            Self::RunTerminal(_) => "run_terminal",
            Self::RunNotLive(_) => "run_not_live",
            Self::InvalidFeedback(_) => "invalid_feedback",
            Self::Storage(_) => "storage_error",
        }
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Storage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlAction {
    Pause,
    Resume,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    #[serde(default)]
    pub run_id: String,
    #[serde(default = "default_author")]
    pub author: String,
    pub text: String,
    #[serde(default)]
    pub in_reply_to: Option<u64>,
}

fn default_author() -> String {
    "researcher".into()
}

/// Messages delivered to a live run's loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inbound {
    Feedback { seq: u64, message: FeedbackMessage },
    Control { seq: u64, action: ControlAction },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub seq: u64,
}

/// Description of a run being created.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewRun {
    pub task: String,
    pub provider: String,
    pub trial_seed: u64,
    pub step_budget: u64,
    pub config_digest: String,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task: String,
    pub provider: String,
    pub trial_seed: u64,
    pub step_budget: u64,
    pub config_digest: String,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub state: RunState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task: String,
    pub outcome: Outcome,
    pub step_index: u64,
    pub awaiting_feedback: bool,
    pub created_ms: u64,
    pub updated_ms: u64,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            run_id: r.run_id.clone(),
            task: r.task.clone(),
            outcome: r.state.outcome.clone(),
            step_index: r.state.step_index,
            awaiting_feedback: r.state.awaiting_feedback,
            created_ms: r.created_ms,
            updated_ms: r.updated_ms,
        }
    }
}

struct LiveInner {
    writer: TraceWriter,
    record: RunRecord,
    sender: Option<Sender<Inbound>>,
    terminal: bool,
    _lock: File,
}

struct LiveRun {
    clock: Arc<dyn Clock>,
    inner: Mutex<LiveInner>,
    changed: Condvar,
}

pub struct RunStore {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    live: Mutex<HashMap<String, Arc<LiveRun>>>,
}

fn try_lock(file: &File) -> bool {
    // SAFETY: flock on a valid, owned descriptor.
    unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) == 0 }
}

fn write_record(dir: &Path, record: &RunRecord) -> Result<(), StoreError> {
    let path = dir.join(RECORD_FILE);
    let tmp = dir.join(format!("{RECORD_FILE}.tmp"));
    let body = serde_json::to_string_pretty(record).expect("record serializes") + "\n";
    std::fs::write(&tmp, body).map_err(|e| storage(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| storage(&path, e))
}

fn read_record(dir: &Path) -> Result<RunRecord, StoreError> {
    let path = dir.join(RECORD_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| storage(&path, e))?;
    serde_json::from_str(&text).map_err(|e| storage(&path, e))
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl RunStore {
    /// Opens a store directory. Runs left `Running` by a process that is gone
    /// are marked failed and their torn trace tails dropped.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        Self::open_with_clock(root, Arc::new(SystemClock))
    }

    pub fn open_with_clock(root: &Path, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        std::fs::create_dir_all(root).map_err(|e| storage(root, e))?;
        let store = Self {
            root: root.to_path_buf(),
            clock,
            live: Mutex::new(HashMap::new()),
        };
        store.recover_interrupted()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn trace_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(TRACE_FILE)
    }

    fn run_ids(&self) -> Result<Vec<String>, StoreError> {
        let entries = std::fs::read_dir(&self.root).map_err(|e| storage(&self.root, e))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(RECORD_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn recover_interrupted(&self) -> Result<(), StoreError> {
        for id in self.run_ids()? {
            let dir = self.run_dir(&id);
            let Ok(mut record) = read_record(&dir) else { continue };
            if !matches!(record.state.outcome, Outcome::Running) {
                continue;
            }
            let lock_path = dir.join(LOCK_FILE);
            let Ok(lock) = File::options().create(true).truncate(false).write(true).open(&lock_path) else {
                continue;
            };
            if !try_lock(&lock) {
                continue;
            }
            let writer = TraceWriter::open(&dir.join(TRACE_FILE))?;
            record.state.step_index = record.state.step_index.min(record.step_budget);
            record.state.awaiting_feedback = false;
            record.state.outcome = Outcome::Failed {
                reason: format!("interrupted; trace recovered through event {}", writer.next_seq() - 1),
            };
            record.updated_ms = self.clock.now_ms();
            write_record(&dir, &record)?;
        }
        Ok(())
    }

    /// Creates a run and returns its id and the receiving end of its
    /// feedback/control queue. Trace timestamps come from `clock`.
    pub fn create_run(&self, spec: NewRun, clock: Arc<dyn Clock>) -> Result<(String, Receiver<Inbound>), StoreError> {
        let run_id = uuid::Uuid::new_v4().to_string();
        let dir = self.run_dir(&run_id);
        std::fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = File::create(&lock_path).map_err(|e| storage(&lock_path, e))?;
        if !try_lock(&lock) {
            return Err(storage(&lock_path, "run lock is held elsewhere"));
        }
        let writer = TraceWriter::open(&dir.join(TRACE_FILE))?;
        let now = self.clock.now_ms();
        let record = RunRecord {
            run_id: run_id.clone(),
            task: spec.task,
            provider: spec.provider,
            trial_seed: spec.trial_seed,
            step_budget: spec.step_budget,
            config_digest: spec.config_digest,
            created_ms: now,
            updated_ms: now,
            state: RunState::new(&run_id),
        };
        write_record(&dir, &record)?;
        let (tx, rx) = channel();
        let live = Arc::new(LiveRun {
            clock,
            inner: Mutex::new(LiveInner {
                writer,
                record,
                sender: Some(tx),
                terminal: false,
                _lock: lock,
            }),
            changed: Condvar::new(),
        });
        self.live.lock().expect("live map").insert(run_id.clone(), live);
        Ok((run_id, rx))
    }

    fn live_run(&self, run_id: &str) -> Option<Arc<LiveRun>> {
        self.live.lock().expect("live map").get(run_id).cloned()
    }

    fn exists(&self, run_id: &str) -> bool {
        valid_run_id(run_id) && self.run_dir(run_id).join(RECORD_FILE).is_file()
    }

    /// Live run that can still accept events, or the matching error.
    fn writable(&self, run_id: &str) -> Result<Arc<LiveRun>, StoreError> {
        match self.live_run(run_id) {
            Some(l) => Ok(l),
            None if !self.exists(run_id) => Err(StoreError::UnknownRun(run_id.into())),
            None => match read_record(&self.run_dir(run_id))?.state.outcome {
                Outcome::Running => Err(StoreError::RunNotLive(run_id.into())),
                _ => Err(StoreError::RunTerminal(run_id.into())),
            },
        }
    }

    fn append_locked(live: &LiveRun, inner: &mut LiveInner, kind: EventKind, payload: &Value) -> Result<u64, StoreError> {
        let seq = inner.writer.append(live.clock.now_ms(), kind, payload)?;
        live.changed.notify_all();
        Ok(seq)
    }

    /// Appends one event; it is on disk when this returns.
    pub fn append_event(&self, run_id: &str, kind: EventKind, payload: Value) -> Result<u64, StoreError> {
        let live = self.writable(run_id)?;
        let mut inner = live.inner.lock().expect("run lock");
        if inner.terminal {
            return Err(StoreError::RunTerminal(run_id.into()));
        }
        Self::append_locked(&live, &mut inner, kind, &payload)
    }

    /// Persists the run state; a terminal outcome closes the run's queue
    /// and ends live streams.
    pub fn update_state(&self, state: &RunState) -> Result<(), StoreError> {
        let live = self.writable(&state.run_id)?;
        let mut inner = live.inner.lock().expect("run lock");
        inner.record.state = state.clone();
        inner.record.updated_ms = self.clock.now_ms();
        write_record(&self.run_dir(&state.run_id), &inner.record)?;
        if state.outcome.is_terminal() {
            inner.terminal = true;
            inner.sender = None;
        }
        live.changed.notify_all();
        Ok(())
    }

    fn deliver(&self, run_id: &str, kind: EventKind, payload: Value, message: impl FnOnce(u64) -> Inbound) -> Result<Receipt, StoreError> {
        let live = self.writable(run_id)?;
        let mut inner = live.inner.lock().expect("run lock");
        if inner.terminal {
            return Err(StoreError::RunTerminal(run_id.into()));
        }
        let Some(sender) = inner.sender.clone() else {
            return Err(StoreError::RunTerminal(run_id.into()));
        };
        let seq = Self::append_locked(&live, &mut inner, kind, &payload)?;
        sender.send(message(seq)).map_err(|_| StoreError::RunTerminal(run_id.into()))?;
        Ok(Receipt { seq })
    }

    /// Records feedback in the trace and hands it to the run's loop.
    pub fn post_feedback(&self, mut message: FeedbackMessage) -> Result<Receipt, StoreError> {
        if message.text.trim().is_empty() {
            return Err(StoreError::InvalidFeedback("text must not be empty".into()));
        }
        if message.author.trim().is_empty() {
            message.author = default_author();
        }
        let run_id = message.run_id.clone();
        let payload = serde_json::json!({
            "author": message.author,
            "text": message.text,
            "in_reply_to": message.in_reply_to,
        });
        self.deliver(&run_id, EventKind::Feedback, payload, |seq| Inbound::Feedback { seq, message })
    }

    pub fn post_control(&self, run_id: &str, action: ControlAction) -> Result<Receipt, StoreError> {
        let payload = serde_json::json!({ "action": action });
        self.deliver(run_id, EventKind::Control, payload, |seq| Inbound::Control { seq, action })
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord, StoreError> {
        if let Some(live) = self.live_run(run_id) {
            return Ok(live.inner.lock().expect("run lock").record.clone());
        }
        if !self.exists(run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        read_record(&self.run_dir(run_id))
    }

    /// Summaries of every run, oldest first.
    pub fn list_runs(&self) -> Result<Vec<RunSummary>, StoreError> {
        let mut out = Vec::new();
        for id in self.run_ids()? {
            if let Ok(record) = self.get_run(&id) {
                out.push(RunSummary::from(&record));
            }
        }
        out.sort_by(|a, b| a.created_ms.cmp(&b.created_ms).then_with(|| a.run_id.cmp(&b.run_id)));
        Ok(out)
    }

    /// Every stored event with `seq >= from`.
    pub fn events(&self, run_id: &str, from: u64) -> Result<Vec<TraceEvent>, StoreError> {
        if !self.exists(run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        let mut events = read_trace(&self.trace_path(run_id), run_id)?;
        events.retain(|e| e.seq >= from);
        Ok(events)
    }

    /// Events from `from` onwards, following live appends until the run ends.
    pub fn stream(&self, run_id: &str, from: u64) -> Result<EventStream, StoreError> {
        if !self.exists(run_id) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        Ok(EventStream {
            cursor: TraceCursor::new(&self.trace_path(run_id), run_id),
            live: self.live_run(run_id),
            from,
            pending: std::collections::VecDeque::new(),
            done: false,
        })
    }
}

pub enum StreamPoll {
    Event(TraceEvent),
    Idle,
    End,
}

pub struct EventStream {
    cursor: TraceCursor,
    live: Option<Arc<LiveRun>>,
    from: u64,
    pending: std::collections::VecDeque<TraceEvent>,
    done: bool,
}

impl EventStream {
    fn terminal(&self) -> bool {
        self.live.as_ref().is_none_or(|l| l.inner.lock().expect("run lock").terminal)
    }

    fn refill(&mut self) -> Result<(), StoreError> {
        let from = self.from;
        self.pending.extend(self.cursor.poll()?.into_iter().filter(|e| e.seq >= from));
        Ok(())
    }

    /// Next event, waiting at most `wait` for one to be appended.
    pub fn poll_wait(&mut self, wait: Duration) -> Result<StreamPoll, StoreError> {
        if let Some(e) = self.pending.pop_front() {
            return Ok(StreamPoll::Event(e));
        }
        if self.done {
            return Ok(StreamPoll::End);
        }
        let terminal = self.terminal();
        self.refill()?;
        if let Some(e) = self.pending.pop_front() {
            return Ok(StreamPoll::Event(e));
        }
        if terminal {
            self.done = true;
            return Ok(StreamPoll::End);
        }
        if let Some(live) = &self.live {
            let guard = live.inner.lock().expect("run lock");
            let _ = live.changed.wait_timeout(guard, wait).expect("run lock");
        }
        self.refill()?;
        Ok(self.pending.pop_front().map_or(StreamPoll::Idle, StreamPoll::Event))
    }
}

impl Iterator for EventStream {
    type Item = Result<TraceEvent, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.poll_wait(STREAM_POLL) {
                Ok(StreamPoll::Event(e)) => return Some(Ok(e)),
                Ok(StreamPoll::Idle) => continue,
                Ok(StreamPoll::End) => return None,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::LogicalClock;
    use serde_json::json;

    fn spec(task: &str) -> NewRun {
        NewRun {
            task: task.into(),
            provider: "scripted".into(),
            trial_seed: 0,
            step_budget: 10,
            config_digest: "d".into(),
        }
    }

    fn store() -> (tempfile::TempDir, RunStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open_with_clock(dir.path(), Arc::new(LogicalClock::default())).unwrap();
        (dir, store)
    }

    fn finish(store: &RunStore, id: &str, outcome: Outcome) {
        let mut state = store.get_run(id).unwrap().state;
        state.outcome = outcome;
        store.update_state(&state).unwrap();
    }

    #[test]
    fn empty_store_lists_nothing() {
        let (_d, store) = store();
        assert!(store.list_runs().unwrap().is_empty());
        assert!(matches!(store.get_run("nope"), Err(StoreError::UnknownRun(_))));
        assert!(matches!(store.append_event("nope", EventKind::Turn, json!(1)), Err(StoreError::UnknownRun(_))));
        assert!(matches!(store.get_run("../etc"), Err(StoreError::UnknownRun(_))));
    }

    #[test]
    fn first_event_is_one_and_replay_is_stable() {
        let (_d, store) = store();
        let (id, _rx) = store.create_run(spec("t"), Arc::new(LogicalClock::default())).unwrap();
        for i in 0..10 {
            assert_eq!(store.append_event(&id, EventKind::Turn, json!({"i": i})).unwrap(), i + 1);
        }
        finish(&store, &id, Outcome::Completed { answer: "a".into() });
        let all: Vec<_> = store.stream(&id, 1).unwrap().map(Result::unwrap).collect();
        assert_eq!(all.len(), 10);
        let tail: Vec<u64> = store.stream(&id, 6).unwrap().map(|e| e.unwrap().seq).collect();
        assert_eq!(tail, [6, 7, 8, 9, 10]);
        assert_eq!(store.events(&id, 1).unwrap(), store.events(&id, 1).unwrap());
        assert!(matches!(store.append_event(&id, EventKind::Turn, json!(0)), Err(StoreError::RunTerminal(_))));
    }

    #[test]
    fn mixed_states_are_listed() {
        let (_d, store) = store();
        let outcomes = [Outcome::Completed { answer: "x".into() }, Outcome::Aborted, Outcome::Running];
        for (i, o) in outcomes.iter().enumerate() {
            let (id, _rx) = store.create_run(spec(&format!("task{i}")), Arc::new(LogicalClock::default())).unwrap();
            if !matches!(o, Outcome::Running) {
                finish(&store, &id, o.clone());
            }
        }
        let listed: Vec<Outcome> = store.list_runs().unwrap().into_iter().map(|s| s.outcome).collect();
        assert_eq!(listed, outcomes);
    }

    #[test]
    fn feedback_is_traced_and_enqueued_once() {
        let (_d, store) = store();
        let (id, rx) = store.create_run(spec("t"), Arc::new(LogicalClock::default())).unwrap();
        let receipt = store
            .post_feedback(FeedbackMessage {
                run_id: id.clone(),
                author: "ana".into(),
                text: "use a smaller learning rate".into(),
                in_reply_to: None,
            })
            .unwrap();
        assert_eq!(receipt.seq, 1);
        match rx.try_recv().unwrap() {
            Inbound::Feedback { seq, message } => {
                assert_eq!(seq, 1);
                assert_eq!(message.text, "use a smaller learning rate");
            }
            other => panic!("{other:?}"),
        }
        assert!(rx.try_recv().is_err());
        let empty = store.post_feedback(FeedbackMessage {
            run_id: id.clone(),
            author: "a".into(),
            text: "  ".into(),
            in_reply_to: None,
        });
        assert!(matches!(empty, Err(StoreError::InvalidFeedback(_))));
        store.post_control(&id, ControlAction::Abort).unwrap();
        assert!(matches!(rx.try_recv().unwrap(), Inbound::Control { action: ControlAction::Abort, .. }));
        finish(&store, &id, Outcome::Aborted);
        let late = store.post_feedback(FeedbackMessage {
            run_id: id.clone(),
            author: "a".into(),
            text: "too late".into(),
            in_reply_to: None,
        });
        assert!(matches!(late, Err(StoreError::RunTerminal(_))));
        let kinds: Vec<EventKind> = store.events(&id, 1).unwrap().into_iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [EventKind::Feedback, EventKind::Control]);
    }

    #[test]
    fn concurrent_appends_stream_in_storage_order() {
        let (_d, store) = store();
        let store = Arc::new(store);
        let (id, _rx) = store.create_run(spec("t"), Arc::new(LogicalClock::default())).unwrap();
        let stream = store.stream(&id, 1).unwrap();
        let writer = {
            let store = store.clone();
            let id = id.clone();
            std::thread::spawn(move || {
                for i in 0..50 {
                    store.append_event(&id, EventKind::Observation, json!(i)).unwrap();
                }
                finish(&store, &id, Outcome::BudgetExhausted);
            })
        };
        let streamed: Vec<u64> = stream.map(|e| e.unwrap().seq).collect();
        writer.join().unwrap();
        let stored: Vec<u64> = store.events(&id, 1).unwrap().into_iter().map(|e| e.seq).collect();
        assert_eq!(streamed, stored);
        assert_eq!(stored.len(), 50);
    }

    #[test]
    fn reopened_store_marks_orphans_failed() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = RunStore::open(dir.path()).unwrap();
            let (id, _rx) = store.create_run(spec("t"), Arc::new(SystemClock)).unwrap();
            store.append_event(&id, EventKind::Turn, json!(1)).unwrap();
            id
        };
        let store = RunStore::open(dir.path()).unwrap();
        let record = store.get_run(&id).unwrap();
        assert!(matches!(record.state.outcome, Outcome::Failed { .. }));
        assert_eq!(store.events(&id, 1).unwrap().len(), 1);
    }
}
