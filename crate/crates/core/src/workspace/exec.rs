use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Workspace, WorkspaceError};

pub const TRUNCATION_NOTE: &str = "\n[output truncated]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub stdout: String,
    pub stderr: String,
    /// `None` when the process was ended by a signal.
    pub exit_code: Option<i32>,
    #[serde(skip)]
    pub duration: Duration,
    pub truncated: bool,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }

    /// Observation text: stdout, then stderr when present.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.stdout);
        if !self.stderr.is_empty() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&self.stderr);
        }
        if !self.success() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            match self.exit_code {
                Some(code) => out.push_str(&format!("[exit status {code}]")),
                None => out.push_str("[terminated by signal]"),
            }
        }
        out
    }
}

/// Whether `text` invokes a package manager's install command.
pub fn looks_like_install(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?m)\b(pip3?|python3?\s+-m\s+pip|apt(-get)?|npm|yarn|pnpm|cargo|conda|mamba|brew|gem)\s+(install|add)\b",
        )
        .expect("valid pattern")
    })
    .is_match(text)
}

fn drain<R: Read + Send + 'static>(mut pipe: R, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, truncated)
    })
}

fn finish(bytes: Vec<u8>, truncated: bool) -> String {
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    if truncated {
        text.push_str(TRUNCATION_NOTE);
    }
    text
}

impl Workspace {
    /// Runs a script with the workspace as working directory.
    ///
    /// `.py` files run under `python3`, `.sh` files under `sh`, anything else
    /// is executed directly. A nonzero exit is an ordinary result.
    pub fn execute_script(&self, script: &str) -> Result<ExecutionResult, WorkspaceError> {
        self.execute_with_args(script, &[])
    }

    pub fn execute_with_args(&self, script: &str, args: &[String]) -> Result<ExecutionResult, WorkspaceError> {
        let policy = self.policy.clone();
        policy.validate()?;
        let path = self.resolve(script)?;
        if !path.is_file() {
            return Err(WorkspaceError::FileMissing(script.to_string()));
        }
        if policy.deny_network_install {
            let source = std::fs::read(&path).map_err(super::io_err(script))?;
            if looks_like_install(&String::from_utf8_lossy(&source)) {
                return Err(WorkspaceError::PolicyViolation(format!(
                    "{script} invokes a package installer; installing new packages is not allowed"
                )));
            }
        }
        let _guard = self.exec_lock.lock().expect("exec lock");
        let mut cmd = match path.extension().and_then(|e| e.to_str()) {
            Some("py") => {
                let mut c = Command::new("python3");
                c.arg("-u").arg(&path);
                c
            }
            Some("sh") => {
                let mut c = Command::new("sh");
                c.arg(&path);
                c
            }
            _ => Command::new(&path),
        };
        cmd.args(args)
            .current_dir(&self.root)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        for name in &policy.env_allowlist {
            if let Some(value) = std::env::var_os(name) {
                cmd.env(name, value);
            }
        }
        let started = Instant::now();
        let mut child = cmd.spawn().map_err(super::io_err(script))?;
        let out = drain(child.stdout.take().expect("piped stdout"), policy.max_output_bytes);
        let err = drain(child.stderr.take().expect("piped stderr"), policy.max_output_bytes);
        let deadline = started + policy.timeout;
        let status = loop {
            match child.try_wait().map_err(super::io_err(script))? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => break None,
                None => thread::sleep(Duration::from_millis(5)),
            }
        };
        let Some(status) = status else {
            let pgid = child.id() as libc::pid_t;
            // SAFETY: signalling our own child's process group.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
            let _ = child.wait();
            let _ = out.join();
            let _ = err.join();
            return Err(WorkspaceError::TimedOut {
                script: script.to_string(),
                timeout: policy.timeout,
            });
        };
        // reap anything the script left behind in its group
        unsafe {
            libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
        }
        let (stdout, t1) = out.join().unwrap_or_default();
        let (stderr, t2) = err.join().unwrap_or_default();
        Ok(ExecutionResult {
            stdout: finish(stdout, t1),
            stderr: finish(stderr, t2),
            exit_code: status.code(),
            duration: started.elapsed(),
            truncated: t1 || t2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::ExecutionPolicy;
    use super::*;

    fn ws(policy: ExecutionPolicy) -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path(), policy).unwrap();
        (dir, ws)
    }

    #[test]
    fn captures_stdout_verbatim() {
        let (_d, ws) = ws(ExecutionPolicy::default());
        std::fs::write(ws.root().join("ok.py"), "print('Validation Loss: 0.5')\n").unwrap();
        let r = ws.execute_script("ok.py").unwrap();
        assert_eq!(r.exit_code, Some(0));
        assert!(r.stdout.contains("Validation Loss: 0.5"));
        assert!(!r.truncated);
    }

    #[test]
    fn failure_is_data() {
        let (_d, ws) = ws(ExecutionPolicy::default());
        std::fs::write(ws.root().join("bad.py"), "raise ValueError('boom')\n").unwrap();
        let r = ws.execute_script("bad.py").unwrap();
        assert_ne!(r.exit_code, Some(0));
        assert!(r.stderr.contains("Traceback"));
        assert!(r.render().contains("ValueError: boom"));
    }

    #[test]
    fn timeout_kills_process_group() {
        let mut policy = ExecutionPolicy::default();
        policy.timeout = Duration::from_secs(2);
        let (_d, ws) = ws(policy);
        std::fs::write(ws.root().join("spin.sh"), "sleep 100 &\nwhile true; do :; done\n").unwrap();
        let started = Instant::now();
        let err = ws.execute_script("spin.sh").unwrap_err();
        let took = started.elapsed();
        assert!(matches!(err, WorkspaceError::TimedOut { .. }));
        assert!(took >= Duration::from_secs(2) && took <= Duration::from_secs(3), "{took:?}");
    }

    #[test]
    fn output_is_capped() {
        let mut policy = ExecutionPolicy::default();
        policy.max_output_bytes = 100;
        let (_d, ws) = ws(policy);
        std::fs::write(ws.root().join("loud.py"), "print('x' * 10000)\n").unwrap();
        let r = ws.execute_script("loud.py").unwrap();
        assert!(r.truncated);
        assert!(r.stdout.ends_with(TRUNCATION_NOTE));
        assert_eq!(r.stdout.len(), 100 + TRUNCATION_NOTE.len());
    }

    #[test]
    fn environment_is_filtered() {
        std::env::set_var("MLR_SECRET_FOR_TEST", "hunter2");
        let (_d, ws) = ws(ExecutionPolicy::default());
        std::fs::write(
            ws.root().join("env.py"),
            "import os\nprint(os.environ.get('MLR_SECRET_FOR_TEST', 'absent'))\nprint(os.getcwd())\n",
        )
        .unwrap();
        let r = ws.execute_script("env.py").unwrap();
        assert!(r.stdout.starts_with("absent\n"));
        assert!(r.stdout.contains(ws.root().to_str().unwrap()));
    }

    #[test]
    fn installs_are_refused() {
        let (_d, ws) = ws(ExecutionPolicy::default());
        std::fs::write(ws.root().join("inst.sh"), "pip install torch\n").unwrap();
        assert!(matches!(ws.execute_script("inst.sh"), Err(WorkspaceError::PolicyViolation(_))));
        assert!(looks_like_install("import os\nos.system('python -m pip install x')"));
        assert!(looks_like_install("apt-get install -y curl"));
        assert!(!looks_like_install("# pipeline installation notes"));
        assert!(matches!(ws.execute_script("missing.py"), Err(WorkspaceError::FileMissing(_))));
    }
}
