use std::cmp::Ordering;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CorpusError, PromptContext};
use crate::text::{normalize_title, tokens};

/// Default number of recent works retrieved per idea.
pub const DEFAULT_RECENT_WORKS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedWork {
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub year: i32,
    pub source_id: String,
    pub relevance: f64,
}

/// Wire request sent to a literature provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteratureQuery {
    pub query: String,
    pub limit: usize,
}

/// Wire record returned by a literature provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureRecord {
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default)]
    pub year: i32,
    #[serde(default)]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

pub trait LiteratureProvider: Send + Sync {
    fn search(&self, query: &LiteratureQuery) -> Result<Vec<LiteratureRecord>, CorpusError>;
}

/// Local provider backed by a line-delimited record file. It returns its
/// whole corpus; ranking and the limit are applied by the caller.
#[derive(Debug, Clone, Default)]
pub struct StubLiterature {
    records: Vec<LiteratureRecord>,
}

impl StubLiterature {
    pub fn new(records: Vec<LiteratureRecord>) -> Self {
        Self { records }
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::new(parse_records(&raw)?))
    }
}

impl LiteratureProvider for StubLiterature {
    fn search(&self, _query: &LiteratureQuery) -> Result<Vec<LiteratureRecord>, CorpusError> {
        Ok(self.records.clone())
    }
}

/// Accepts either a JSON array of records or one record per line.
fn parse_records(raw: &str) -> Result<Vec<LiteratureRecord>, CorpusError> {
    let trimmed = raw.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| CorpusError::MalformedResponse(e.to_string()));
    }
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::MalformedResponse(format!("record {}: {e}", n + 1)))
        })
        .collect()
}

/// HTTP provider: POSTs the query as JSON and reads records from the body.
pub struct HttpLiterature {
    url: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    backoff: Duration,
}

impl HttpLiterature {
    pub fn new(url: impl Into<String>, max_retries: u32, backoff: Duration) -> Result<Self, CorpusError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| CorpusError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            client,
            max_retries,
            backoff,
        })
    }

    fn attempt(&self, query: &LiteratureQuery) -> Result<String, String> {
        let resp = self.client.post(&self.url).json(query).send().map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        resp.text().map_err(|e| e.to_string())
    }
}

impl LiteratureProvider for HttpLiterature {
    fn search(&self, query: &LiteratureQuery) -> Result<Vec<LiteratureRecord>, CorpusError> {
        let mut backoff = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            match self.attempt(query) {
                Ok(body) => return parse_records(&body),
                Err(e) => last = e,
            }
            if attempt < self.max_retries && !backoff.is_zero() {
                std::thread::sleep(backoff);
                backoff = backoff.saturating_mul(2);
            }
        }
        Err(CorpusError::ProviderUnavailable(last))
    }
}

/// Number of keywords whose token sequence occurs contiguously in `text`.
pub fn keyword_overlap(keywords: &[String], text: &str) -> usize {
    let doc = tokens(text);
    keywords
        .iter()
        .filter(|k| {
            let needle = tokens(k);
            !needle.is_empty() && doc.windows(needle.len()).any(|w| w == needle.as_slice())
        })
        .count()
}

fn rank_order(a: &RelatedWork, b: &RelatedWork) -> Ordering {
    b.relevance
        .total_cmp(&a.relevance)
        .then_with(|| b.year.cmp(&a.year))
        .then_with(|| a.title.cmp(&b.title))
}

/// Collapses duplicates by normalized title and orders by relevance desc,
/// year desc, then title ascending. The best-ranked duplicate survives.
pub fn dedupe_and_rank(mut candidates: Vec<RelatedWork>) -> Vec<RelatedWork> {
    candidates.sort_by(rank_order);
    let mut seen = std::collections::HashSet::new();
    candidates.retain(|w| seen.insert(normalize_title(&w.title)));
    candidates
}

/// Retrieves at most `limit` recent works for the context's keywords.
///
/// Relevance is the provider's score when it supplies one, otherwise the
/// keyword-overlap count against title and abstract.
pub fn search_recent_works(
    context: &PromptContext,
    limit: usize,
    provider: &dyn LiteratureProvider,
) -> Result<Vec<RelatedWork>, CorpusError> {
    if limit == 0 {
        return Ok(Vec::new());
    }
    let keywords = &context.frame.keywords;
    let query = LiteratureQuery {
        query: keywords.join(", "),
        limit,
    };
    let records = provider.search(&query)?;
    let works = records
        .into_iter()
        .filter(|r| !r.title.trim().is_empty())
        .map(|r| {
            let relevance = match r.score {
                Some(s) if s.is_finite() => s.max(0.0),
                _ => keyword_overlap(keywords, &format!("{} {}", r.title, r.abstract_text)) as f64,
            };
            RelatedWork {
                title: r.title.trim().to_string(),
                abstract_text: r.abstract_text,
                year: r.year,
                source_id: r.id,
                relevance,
            }
        })
        .collect();
    let mut ranked = dedupe_and_rank(works);
    ranked.truncate(limit);
    Ok(ranked)
}
