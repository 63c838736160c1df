//! The agent's file arena: contained path resolution, versioned edits with
//! undo, and sandboxed script execution.

mod exec;

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};

pub use exec::{looks_like_install, ExecutionResult, TRUNCATION_NOTE};

/// Maximum number of lines a single inspection may return.
pub const MAX_INSPECT_LINES: usize = 100;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("invalid path {0:?}: it must be an existing location inside the workspace")]
    InvalidPath(String),
    #[error("cannot copy {0:?}: the source file does not exist")]
    SourceMissing(String),
    #[error("file {0:?} does not exist")]
    FileMissing(String),
    #[error("cannot show lines {start}-{end}: at most {MAX_INSPECT_LINES} lines can be displayed at once")]
    RangeTooLarge { start: usize, end: usize },
    #[error("invalid line range {start}-{end}: line numbers start at 1 and the end must not precede the start")]
    InvalidRange { start: usize, end: usize },
    #[error("no edit history for {0:?}; there is nothing to undo")]
    NoHistory(String),
    #[error("script {script:?} timed out after {timeout:?} and was killed")]
    TimedOut { script: String, timeout: Duration },
    #[error("execution refused: {0}")]
    PolicyViolation(String),
    #[error("invalid execution policy: {0}")]
    InvalidPolicy(String),
    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &str) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub file: String,
    pub previous_content: Vec<u8>,
    /// Whether the file existed before the edit; undo removes files that did not.
    #[serde(default = "yes")]
    pub existed: bool,
    pub timestamp_ms: u64,
    pub edit_instruction: Option<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPolicy {
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_output_bytes: usize,
    pub env_allowlist: Vec<String>,
    pub deny_network_install: bool,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(300),
            max_output_bytes: 64 * 1024,
            env_allowlist: ["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR"].map(String::from).to_vec(),
            deny_network_install: true,
        }
    }
}

impl ExecutionPolicy {
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        if self.timeout.is_zero() {
            return Err(WorkspaceError::InvalidPolicy("timeout must be positive".into()));
        }
        if self.max_output_bytes == 0 {
            return Err(WorkspaceError::InvalidPolicy("max_output_bytes must be positive".into()));
        }
        Ok(())
    }
}

/// A directory the agent may read, edit and execute in.
pub struct Workspace {
    root: PathBuf,
    policy: ExecutionPolicy,
    clock: Arc<dyn Clock>,
    history: Mutex<HashMap<String, Vec<EditRecord>>>,
    exec_lock: Mutex<()>,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Workspace {
    /// Opens `root`, creating it when missing.
    pub fn open(root: &Path, policy: ExecutionPolicy) -> Result<Self, WorkspaceError> {
        policy.validate()?;
        let shown = root.display().to_string();
        std::fs::create_dir_all(root).map_err(io_err(&shown))?;
        let root = root.canonicalize().map_err(io_err(&shown))?;
        Ok(Self {
            root,
            policy,
            clock: Arc::new(SystemClock),
            history: Mutex::new(HashMap::new()),
            exec_lock: Mutex::new(()),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn policy(&self) -> &ExecutionPolicy {
        &self.policy
    }

    /// Maps a workspace-relative path to an absolute one inside the root.
    ///
    /// Absolute paths, `..` segments that climb above the root and symlinks
    /// that lead outside it are all rejected.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, WorkspaceError> {
        let invalid = || WorkspaceError::InvalidPath(rel.to_string());
        if rel.contains('\0') {
            return Err(invalid());
        }
        let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
        for comp in Path::new(rel.trim()).components() {
            match comp {
                Component::Normal(p) => parts.push(p),
                Component::CurDir => {}
                Component::ParentDir => {
                    parts.pop().ok_or_else(invalid)?;
                }
                Component::RootDir | Component::Prefix(_) => return Err(invalid()),
            }
        }
        let mut full = self.root.clone();
        full.extend(&parts);
        // the deepest existing ancestor must still be inside the root
        let mut probe = full.as_path();
        loop {
            if probe.symlink_metadata().is_ok() {
                let real = probe.canonicalize().map_err(|_| invalid())?;
                if !real.starts_with(&self.root) {
                    return Err(invalid());
                }
                break;
            }
            probe = probe.parent().ok_or_else(invalid)?;
        }
        Ok(full)
    }

    /// Relative display form of an absolute path inside the root.
    pub fn relative(&self, abs: &Path) -> String {
        abs.strip_prefix(&self.root)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| abs.to_string_lossy().into_owned())
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.exists()).unwrap_or(false)
    }

    /// Sorted entries of a directory; subdirectories end with `/`.
    pub fn list_files(&self, dir_path: &str) -> Result<Vec<String>, WorkspaceError> {
        let rel = if dir_path.trim().is_empty() { "." } else { dir_path };
        let dir = self.resolve(rel)?;
        if !dir.is_dir() {
            return Err(WorkspaceError::InvalidPath(dir_path.to_string()));
        }
        let mut entries = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(dir_path))? {
            let entry = entry.map_err(io_err(dir_path))?;
            let mut name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() {
                name.push('/');
            }
            entries.push(name);
        }
        entries.sort();
        Ok(entries)
    }

    pub fn copy_file(&self, source: &str, destination: &str) -> Result<(), WorkspaceError> {
        let src = self.resolve(source)?;
        let dst = self.resolve(destination)?;
        if !src.is_file() {
            return Err(WorkspaceError::SourceMissing(source.to_string()));
        }
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(destination))?;
        }
        std::fs::copy(&src, &dst).map_err(io_err(destination))?;
        Ok(())
    }

    pub fn read_bytes(&self, rel: &str) -> Result<Vec<u8>, WorkspaceError> {
        let path = self.resolve(rel)?;
        if !path.is_file() {
            return Err(WorkspaceError::FileMissing(rel.to_string()));
        }
        std::fs::read(&path).map_err(io_err(rel))
    }

    pub fn read_text(&self, rel: &str) -> Result<String, WorkspaceError> {
        Ok(String::from_utf8_lossy(&self.read_bytes(rel)?).into_owned())
    }

    /// Inclusive 1-based line range with original line endings, clipped at
    /// the end of the file.
    pub fn read_lines(&self, script: &str, start: usize, end: usize) -> Result<String, WorkspaceError> {
        if start == 0 || end < start {
            return Err(WorkspaceError::InvalidRange { start, end });
        }
        if end - start + 1 > MAX_INSPECT_LINES {
            return Err(WorkspaceError::RangeTooLarge { start, end });
        }
        let text = self.read_text(script)?;
        Ok(text.split_inclusive('\n').skip(start - 1).take(end - start + 1).collect())
    }

    /// Replaces a file, remembering its prior bytes for undo.
    pub fn write_with_history(
        &self,
        file: &str,
        new_content: &[u8],
        edit_instruction: Option<&str>,
    ) -> Result<EditRecord, WorkspaceError> {
        let path = self.resolve(file)?;
        if path.is_dir() {
            return Err(WorkspaceError::InvalidPath(file.to_string()));
        }
        let existed = path.is_file();
        let previous_content = if existed { std::fs::read(&path).map_err(io_err(file))? } else { Vec::new() };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(file))?;
        }
        std::fs::write(&path, new_content).map_err(io_err(file))?;
        let record = EditRecord {
            file: self.relative(&path),
            previous_content,
            existed,
            timestamp_ms: self.clock.now_ms(),
            edit_instruction: edit_instruction.map(str::to_string),
        };
        self.history
            .lock()
            .expect("history lock")
            .entry(record.file.clone())
            .or_default()
            .push(record.clone());
        Ok(record)
    }

    pub fn history_depth(&self, file: &str) -> usize {
        let Ok(path) = self.resolve(file) else { return 0 };
        let key = self.relative(&path);
        self.history.lock().expect("history lock").get(&key).map_or(0, Vec::len)
    }

    /// Restores the bytes preceding the last edit and returns them as text.
    pub fn undo_edit(&self, script: &str) -> Result<String, WorkspaceError> {
        let path = self.resolve(script)?;
        let key = self.relative(&path);
        let record = {
            let mut history = self.history.lock().expect("history lock");
            history.get_mut(&key).and_then(Vec::pop)
        };
        let Some(record) = record else {
            return Err(if path.exists() {
                WorkspaceError::NoHistory(script.to_string())
            } else {
                WorkspaceError::FileMissing(script.to_string())
            });
        };
        if record.existed {
            std::fs::write(&path, &record.previous_content).map_err(io_err(script))?;
        } else if path.exists() {
            std::fs::remove_file(&path).map_err(io_err(script))?;
        }
        Ok(String::from_utf8_lossy(&record.previous_content).into_owned())
    }
}

/// Recursively copies `src` into `dst`, creating `dst`.
pub fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dst)?;
    let mut entries: Vec<_> = std::fs::read_dir(src)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let target = dst.join(entry.file_name());
        let kind = entry.file_type()?;
        if kind.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else if kind.is_file() {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ws() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(&dir.path().join("root"), ExecutionPolicy::default()).unwrap();
        (dir, ws)
    }

    #[test]
    fn listing_is_sorted_and_marks_dirs() {
        let (_d, ws) = ws();
        assert!(ws.list_files(".").unwrap().is_empty());
        std::fs::write(ws.root().join("a.txt"), "a").unwrap();
        std::fs::create_dir(ws.root().join("sub")).unwrap();
        std::fs::write(ws.root().join("sub/b.txt"), "b").unwrap();
        assert_eq!(ws.list_files(".").unwrap(), ["a.txt", "sub/"]);
        assert_eq!(ws.list_files("").unwrap(), ["a.txt", "sub/"]);
        assert!(matches!(ws.list_files("../outside"), Err(WorkspaceError::InvalidPath(_))));
        assert!(matches!(ws.list_files("missing"), Err(WorkspaceError::InvalidPath(_))));
    }

    #[test]
    fn escapes_are_rejected() {
        let (d, ws) = ws();
        for bad in ["..", "../x", "/etc/passwd", "a/../../x", "sub/../../root2"] {
            assert!(ws.resolve(bad).is_err(), "{bad}");
        }
        assert!(ws.resolve("a/../b").is_ok());
        std::os::unix::fs::symlink(d.path(), ws.root().join("link")).unwrap();
        assert!(ws.resolve("link").is_err());
        assert!(ws.resolve("link/new.txt").is_err());
        assert!(ws.write_with_history("link/evil.txt", b"x", None).is_err());
        assert!(!d.path().join("evil.txt").exists());
    }

    #[test]
    fn copy_preserves_bytes() {
        let (_d, ws) = ws();
        std::fs::write(ws.root().join("a.txt"), [0u8, 1, 2, 255]).unwrap();
        ws.copy_file("a.txt", "b/c.txt").unwrap();
        assert_eq!(std::fs::read(ws.root().join("b/c.txt")).unwrap(), [0u8, 1, 2, 255]);
        let err = ws.copy_file("nope.txt", "x.txt").unwrap_err();
        assert!(matches!(err, WorkspaceError::SourceMissing(_)));
        assert!(err.to_string().contains("cannot copy"));
        assert!(matches!(ws.copy_file("a.txt", "../x.txt"), Err(WorkspaceError::InvalidPath(_))));
    }

    #[test]
    fn line_ranges() {
        let (_d, ws) = ws();
        let body: String = (1..=200).map(|i| format!("line {i}\r\n")).collect();
        std::fs::write(ws.root().join("big.py"), &body).unwrap();
        std::fs::write(ws.root().join("five.py"), "1\n2\n3\n4\n5").unwrap();
        assert_eq!(ws.read_lines("big.py", 1, 74).unwrap().lines().count(), 74);
        assert!(ws.read_lines("big.py", 1, 74).unwrap().ends_with("line 74\r\n"));
        assert!(matches!(ws.read_lines("big.py", 1, 120), Err(WorkspaceError::RangeTooLarge { .. })));
        assert_eq!(ws.read_lines("five.py", 1, 10).unwrap(), "1\n2\n3\n4\n5");
        assert!(matches!(ws.read_lines("five.py", 0, 1), Err(WorkspaceError::InvalidRange { .. })));
        assert!(matches!(ws.read_lines("gone.py", 1, 1), Err(WorkspaceError::FileMissing(_))));
    }

    #[test]
    fn history_stack() {
        let (_d, ws) = ws();
        let first = ws.write_with_history("s.py", b"v1", Some("create")).unwrap();
        assert!(first.previous_content.is_empty());
        assert!(!first.existed);
        let second = ws.write_with_history("s.py", b"v2", None).unwrap();
        assert_eq!(second.previous_content, b"v1");
        ws.write_with_history("s.py", b"v2", None).unwrap();
        assert_eq!(ws.history_depth("s.py"), 3);
        assert_eq!(ws.undo_edit("s.py").unwrap(), "v2");
        assert_eq!(ws.undo_edit("./s.py").unwrap(), "v1");
        assert_eq!(std::fs::read(ws.root().join("s.py")).unwrap(), b"v1");
        ws.undo_edit("s.py").unwrap();
        assert!(!ws.root().join("s.py").exists());
        assert!(matches!(ws.undo_edit("s.py"), Err(WorkspaceError::FileMissing(_))));
        std::fs::write(ws.root().join("t.py"), "x").unwrap();
        assert!(matches!(ws.undo_edit("t.py"), Err(WorkspaceError::NoHistory(_))));
    }

    #[test]
    fn policy_validation() {
        let mut p = ExecutionPolicy::default();
        p.timeout = Duration::ZERO;
        assert!(p.validate().is_err());
        let mut p = ExecutionPolicy::default();
        p.max_output_bytes = 0;
        assert!(p.validate().is_err());
    }

    fn arb_path() -> impl Strategy<Value = String> {
        let seg = prop_oneof![
            Just("..".to_string()),
            Just(".".to_string()),
            Just("".to_string()),
            "[a-c]{1,3}".prop_map(|s| s),
        ];
        (any::<bool>(), proptest::collection::vec(seg, 0..6))
            .prop_map(|(abs, segs)| format!("{}{}", if abs { "/" } else { "" }, segs.join("/")))
    }

    proptest! {
        #[test]
        fn resolution_never_leaves_root(path in arb_path()) {
            let (_d, ws) = ws();
            if let Ok(abs) = ws.resolve(&path) {
                prop_assert!(abs.starts_with(ws.root()));
            }
        }

        #[test]
        fn inspection_never_exceeds_cap(start in 0usize..300, len in 0usize..300) {
            let (_d, ws) = ws();
            let body: String = (0..250).map(|i| format!("{i}\n")).collect();
            std::fs::write(ws.root().join("f.py"), body).unwrap();
            if let Ok(text) = ws.read_lines("f.py", start, start + len) {
                prop_assert!(text.lines().count() <= MAX_INSPECT_LINES);
            }
        }
    }
}
