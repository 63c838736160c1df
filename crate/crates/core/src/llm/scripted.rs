use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_usage, CompletionProvider, CompletionRequest, ProviderError, ProviderReply};

/// One recorded exchange. When `expect_substring` is set the incoming prompt
/// must contain it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "expect")]
    pub expect_substring: Option<String>,
    pub reply: String,
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            expect_substring: None,
            reply: text.into(),
        }
    }

    pub fn expecting(expect: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            expect_substring: Some(expect.into()),
            reply: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScriptedSession {
    entries: Vec<ScriptEntry>,
    cursor: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionLoadError {
    #[error("cannot read session file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed session file {path}: {detail}")]
    Malformed { path: String, detail: String },
}

#[derive(Deserialize)]
struct TomlSession {
    #[serde(default, rename = "entry")]
    entries: Vec<ScriptEntry>,
}

impl ScriptedSession {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, cursor: 0 }
    }

    /// Loads a session from a `.toml` file (`[[entry]]` tables) or a JSON
    /// lines file (one `{expect_substring?, reply}` object per line).
    pub fn load(path: &Path) -> Result<Self, SessionLoadError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| SessionLoadError::Io {
            path: display.clone(),
            source,
        })?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let entries = if is_toml {
            toml::from_str::<TomlSession>(&raw)
                .map_err(|e| SessionLoadError::Malformed {
                    path: display.clone(),
                    detail: e.to_string(),
                })?
                .entries
        } else {
            raw.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(n, l)| {
                    serde_json::from_str::<ScriptEntry>(l).map_err(|e| SessionLoadError::Malformed {
                        path: display.clone(),
                        detail: format!("line {}: {e}", n + 1),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Plays the next entry against `prompt`. The cursor advances only on a
    /// successful match.
    pub fn next_reply(&mut self, prompt: &str) -> Result<String, ProviderError> {
        let Some(entry) = self.entries.get(self.cursor) else {
            return Err(ProviderError::SessionExhausted { len: self.entries.len() });
        };
        if let Some(expected) = &entry.expect_substring {
            if !prompt.contains(expected.as_str()) {
                return Err(ProviderError::SessionMismatch {
                    index: self.cursor,
                    expected: expected.clone(),
                });
            }
        }
        self.cursor += 1;
        Ok(entry.reply.clone())
    }
}

/// Deterministic provider replaying a [`ScriptedSession`] in strict order.
pub struct ScriptedProvider {
    id: String,
    session: Mutex<ScriptedSession>,
}

impl ScriptedProvider {
    pub fn new(name: &str, session: ScriptedSession) -> Self {
        Self {
            id: format!("scripted:{name}"),
            session: Mutex::new(session),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, SessionLoadError> {
        let session = ScriptedSession::load(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("session");
        Ok(Self::new(name, session))
    }

    pub fn cursor(&self) -> usize {
        self.session.lock().unwrap().cursor()
    }

    pub fn remaining(&self) -> usize {
        let s = self.session.lock().unwrap();
        s.len() - s.cursor()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        let text = self.session.lock().unwrap().next_reply(&request.prompt)?;
        Ok(ProviderReply {
            usage: estimate_usage(&request.prompt, &text),
            text,
        })
    }
}
