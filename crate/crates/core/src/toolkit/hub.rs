use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, DatasetCandidate, DatasetManifest};
use super::ToolkitError;
use crate::text::tokens;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it", "of", "on", "or",
    "that", "the", "this", "to", "use", "using", "with",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub score: f64,
    #[serde(default, alias = "tags")]
    pub task_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub score: f64,
    /// Directory holding the manifest and split files, relative to the hub.
    #[serde(default)]
    pub path: Option<String>,
}

pub trait ModelHub: Send + Sync {
    fn search(&self, instruction: &str) -> Result<Vec<ModelCandidate>, ToolkitError>;
}

pub trait DatasetHub: Send + Sync {
    fn search(&self, instruction: &str) -> Result<Vec<DatasetEntry>, ToolkitError>;
    /// Writes the entry's manifest and split files into `dest`.
    fn materialize(&self, entry: &DatasetEntry, dest: &Path) -> Result<(), ToolkitError>;
}

fn content_tokens(text: &str) -> HashSet<String> {
    tokens(text).into_iter().filter(|t| !STOPWORDS.contains(&t.as_str())).collect()
}

fn overlaps(query: &HashSet<String>, fields: &[&str]) -> bool {
    query.is_empty() || fields.iter().any(|f| content_tokens(f).iter().any(|t| query.contains(t)))
}

/// Keeps candidates sharing a content word with `instruction` (all of them
/// when it has none), one per name, ordered by score desc then name.
pub fn rank_candidates(instruction: &str, candidates: Vec<ModelCandidate>) -> Vec<ModelCandidate> {
    let query = content_tokens(instruction);
    let mut kept: Vec<ModelCandidate> = candidates
        .into_iter()
        .filter(|c| {
            let tags = c.task_tags.join(" ");
            overlaps(&query, &[&c.name, &c.description, &tags])
        })
        .collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    let mut seen = HashSet::new();
    kept.retain(|c| seen.insert(c.name.clone()));
    kept
}

fn rank_entries(instruction: &str, entries: Vec<DatasetEntry>) -> Vec<DatasetEntry> {
    let query = content_tokens(instruction);
    let mut kept: Vec<DatasetEntry> = entries
        .into_iter()
        .filter(|e| {
            let tags = e.tags.join(" ");
            overlaps(&query, &[&e.name, &e.description, &tags])
        })
        .collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    let mut seen = HashSet::new();
    kept.retain(|e| seen.insert(e.name.clone()));
    kept
}

/// Ranked models for `instruction`; `NoMatch` only when `require_match`.
pub fn retrieve_model(
    instruction: &str,
    hub: &dyn ModelHub,
    require_match: bool,
) -> Result<Vec<ModelCandidate>, ToolkitError> {
    let ranked = rank_candidates(instruction, hub.search(instruction)?);
    if require_match && ranked.is_empty() {
        return Err(ToolkitError::NoMatch(instruction.to_string()));
    }
    Ok(ranked)
}

/// Materializes the best-ranked dataset for `instruction` into `save_dir`.
pub fn retrieve_dataset(
    instruction: &str,
    save_dir: &Path,
    hub: &dyn DatasetHub,
) -> Result<DatasetCandidate, ToolkitError> {
    let best = rank_entries(instruction, hub.search(instruction)?)
        .into_iter()
        .next()
        .ok_or_else(|| ToolkitError::NoMatch(instruction.to_string()))?;
    std::fs::create_dir_all(save_dir).map_err(|e| ToolkitError::WriteError(format!("{}: {e}", save_dir.display())))?;
    hub.materialize(&best, save_dir)?;
    load_dataset(save_dir)
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ToolkitError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ToolkitError::HubUnavailable(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| ToolkitError::HubUnavailable(format!("{} record {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Model hub backed by a JSON-lines record file.
#[derive(Debug, Clone, Default)]
pub struct StubModelHub {
    records: Vec<ModelCandidate>,
}

impl StubModelHub {
    pub fn new(records: Vec<ModelCandidate>) -> Self {
        Self { records }
    }

    pub fn from_file(path: &Path) -> Result<Self, ToolkitError> {
        Ok(Self::new(read_records(path)?))
    }
}

impl ModelHub for StubModelHub {
    fn search(&self, _instruction: &str) -> Result<Vec<ModelCandidate>, ToolkitError> {
        Ok(self.records.clone())
    }
}

/// Dataset hub backed by a directory with `hub.jsonl` and one directory
/// per dataset.
#[derive(Debug, Clone)]
pub struct StubDatasetHub {
    root: PathBuf,
    entries: Vec<DatasetEntry>,
}

impl StubDatasetHub {
    pub fn open(root: &Path) -> Result<Self, ToolkitError> {
        Ok(Self {
            root: root.to_path_buf(),
            entries: read_records(&root.join("hub.jsonl"))?,
        })
    }
}

impl DatasetHub for StubDatasetHub {
    fn search(&self, _instruction: &str) -> Result<Vec<DatasetEntry>, ToolkitError> {
        Ok(self.entries.clone())
    }

    fn materialize(&self, entry: &DatasetEntry, dest: &Path) -> Result<(), ToolkitError> {
        let src = self.root.join(entry.path.as_deref().unwrap_or(&entry.name));
        if !src.join("manifest.json").is_file() {
            return Err(ToolkitError::HubUnavailable(format!("{} has no manifest.json", src.display())));
        }
        crate::workspace::copy_tree(&src, dest).map_err(|e| ToolkitError::WriteError(format!("{}: {e}", dest.display())))
    }
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client, ToolkitError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ToolkitError::HubUnavailable(e.to_string()))
}

fn unavailable(e: impl std::fmt::Display) -> ToolkitError {
    ToolkitError::HubUnavailable(e.to_string())
}

/// Model hub that POSTs `{"query": ...}` to a search endpoint returning a
/// JSON array of candidates.
pub struct HttpModelHub {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpModelHub {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, ToolkitError> {
        Ok(Self {
            url: url.into(),
            client: http_client(timeout)?,
        })
    }
}

impl ModelHub for HttpModelHub {
    fn search(&self, instruction: &str) -> Result<Vec<ModelCandidate>, ToolkitError> {
        self.client
            .post(&self.url)
            .json(&serde_json::json!({ "query": instruction }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(unavailable)?
            .json()
            .map_err(unavailable)
    }
}

/// Dataset hub over HTTP: `POST {base}/search`, then
/// `GET {base}/datasets/{name}/manifest.json` and one GET per split file.
pub struct HttpDatasetHub {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpDatasetHub {
    pub fn new(base: impl Into<String>, timeout: Duration) -> Result<Self, ToolkitError> {
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            client: http_client(timeout)?,
        })
    }

    fn get(&self, url: &str) -> Result<String, ToolkitError> {
        self.client
            .get(url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(unavailable)
    }
}

impl DatasetHub for HttpDatasetHub {
    fn search(&self, instruction: &str) -> Result<Vec<DatasetEntry>, ToolkitError> {
        self.client
            .post(format!("{}/search", self.base))
            .json(&serde_json::json!({ "query": instruction }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(unavailable)?
            .json()
            .map_err(unavailable)
    }

    fn materialize(&self, entry: &DatasetEntry, dest: &Path) -> Result<(), ToolkitError> {
        let prefix = format!("{}/datasets/{}", self.base, entry.name);
        let manifest_text = self.get(&format!("{prefix}/manifest.json"))?;
        let manifest: DatasetManifest = serde_json::from_str(&manifest_text).map_err(unavailable)?;
        let write = |name: &str, body: &str| {
            std::fs::write(dest.join(name), body).map_err(|e| ToolkitError::WriteError(format!("{name}: {e}")))
        };
        for split in &manifest.splits {
            let file = split.file_name();
            write(&file, &self.get(&format!("{prefix}/{file}"))?)?;
        }
        write("manifest.json", &manifest_text)
    }
}
