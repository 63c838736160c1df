//! Trace files: a sequence of `[len u32 LE][crc32 u32 LE][json body]` frames.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StoreError;

const HEADER_LEN: usize = 8;
const MAX_RECORD_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Turn,
    Action,
    Observation,
    Summary,
    Feedback,
    Control,
    StateChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: EventKind,
    pub payload: Value,
}

/// What is written to disk; the run id comes from the file's location.
#[derive(Serialize, Deserialize)]
struct Record {
    seq: u64,
    timestamp_ms: u64,
    kind: EventKind,
    payload: Value,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Storage(format!("{}: {e}", path.display()))
}

pub(crate) fn encode(seq: u64, timestamp_ms: u64, kind: EventKind, payload: &Value) -> Vec<u8> {
    let body = serde_json::to_vec(&Record {
        seq,
        timestamp_ms,
        kind,
        payload: payload.clone(),
    })
    .expect("json values serialize");
    let mut frame = Vec::with_capacity(HEADER_LEN + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

/// Decodes one frame at the start of `bytes`: the event and the frame
/// length, or `None` when the frame is incomplete or corrupt.
fn decode(bytes: &[u8], run_id: &str) -> Option<(TraceEvent, usize)> {
    let header = bytes.get(..HEADER_LEN)?;
    let len = u32::from_le_bytes(header[..4].try_into().ok()?) as usize;
    let crc = u32::from_le_bytes(header[4..].try_into().ok()?);
    if len > MAX_RECORD_LEN {
        return None;
    }
    let body = bytes.get(HEADER_LEN..HEADER_LEN + len)?;
    if crc32fast::hash(body) != crc {
        return None;
    }
    let r: Record = serde_json::from_slice(body).ok()?;
    Some((
        TraceEvent {
            run_id: run_id.to_string(),
            seq: r.seq,
            timestamp_ms: r.timestamp_ms,
            kind: r.kind,
            payload: r.payload,
        },
        HEADER_LEN + len,
    ))
}

/// Decodes the valid prefix of a trace: events and the byte length they cover.
/// Decoding stops at the first torn, corrupt or out-of-sequence record.
pub(crate) fn decode_prefix(bytes: &[u8], run_id: &str) -> (Vec<TraceEvent>, usize) {
    let mut events = Vec::new();
    let mut offset = 0;
    while let Some((event, used)) = decode(&bytes[offset..], run_id) {
        if event.seq != events.len() as u64 + 1 {
            break;
        }
        events.push(event);
        offset += used;
    }
    (events, offset)
}

/// Reads every intact event of a trace file.
pub fn read_trace(path: &Path, run_id: &str) -> Result<Vec<TraceEvent>, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| storage(path, e))?;
    Ok(decode_prefix(&bytes, run_id).0)
}

/// Single appender for one trace file.
pub struct TraceWriter {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl TraceWriter {
    /// Opens (or creates) a trace, dropping any torn tail left by a crash.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(|e| storage(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| storage(path, e))?;
        let (events, valid) = decode_prefix(&bytes, "");
        if valid < bytes.len() {
            file.set_len(valid as u64).map_err(|e| storage(path, e))?;
            file.sync_data().map_err(|e| storage(path, e))?;
        }
        file.seek(SeekFrom::Start(valid as u64)).map_err(|e| storage(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_seq: events.len() as u64 + 1,
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes and syncs one record; returns its sequence number.
    pub fn append(&mut self, timestamp_ms: u64, kind: EventKind, payload: &Value) -> Result<u64, StoreError> {
        let seq = self.next_seq;
        let frame = encode(seq, timestamp_ms, kind, payload);
        self.file.write_all(&frame).map_err(|e| storage(&self.path, e))?;
        self.file.sync_data().map_err(|e| storage(&self.path, e))?;
        self.next_seq += 1;
        Ok(seq)
    }
}

/// Incremental reader that picks up records as they are appended.
pub struct TraceCursor {
    path: PathBuf,
    run_id: String,
    offset: u64,
    buffer: Vec<u8>,
    last_seq: u64,
}

impl TraceCursor {
    pub fn new(path: &Path, run_id: &str) -> Self {
        Self {
            path: path.to_path_buf(),
            run_id: run_id.to_string(),
            offset: 0,
            buffer: Vec::new(),
            last_seq: 0,
        }
    }

    /// Every complete record written since the last call.
    pub fn poll(&mut self) -> Result<Vec<TraceEvent>, StoreError> {
        let mut file = File::open(&self.path).map_err(|e| storage(&self.path, e))?;
        file.seek(SeekFrom::Start(self.offset)).map_err(|e| storage(&self.path, e))?;
        let mut fresh = Vec::new();
        file.read_to_end(&mut fresh).map_err(|e| storage(&self.path, e))?;
        self.offset += fresh.len() as u64;
        self.buffer.extend_from_slice(&fresh);
        let mut out = Vec::new();
        let mut used_total = 0;
        while let Some((event, used)) = decode(&self.buffer[used_total..], &self.run_id) {
            if event.seq != self.last_seq + 1 {
                break;
            }
            self.last_seq = event.seq;
            used_total += used;
            out.push(event);
        }
        self.buffer.drain(..used_total);
        Ok(out)
    }
}
