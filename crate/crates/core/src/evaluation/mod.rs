//! Idea scorecards, text similarity and the trial metrics: improvement over
//! the prototype, success rate and table averages.

mod scorecard;
mod tables;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Outcome;
use crate::text::tokens;

pub use scorecard::{
    parse_scores, score_idea, scorecard_prompt, scorecard_records, IdeaScorecard, Reviewer, ScoreRecord, Target,
    DESIGN_CRITERIA, HYPOTHESIS_CRITERIA, SCORECARD_TEMPLATE_ID,
};
pub use tables::RecordedTable;

pub const SIMILARITY_METRIC_ID: &str = "tf-cosine/v1";
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score {score} for {criterion} is outside 1..5")]
    ScoreOutOfRange { criterion: String, score: i64 },
    #[error("could not parse scores: {0}")]
    Parse(String),
    #[error("criteria {found:?} do not match the {target} set")]
    CriteriaMismatch { target: String, found: Vec<String> },
    #[error(transparent)]
    Gateway(#[from] crate::llm::GatewayError),
    #[error("baseline value is zero; improvement is undefined")]
    ZeroBaseline,
    #[error("no trials to score")]
    EmptyTrials,
    #[error("no values to average")]
    EmptyMap,
    #[error("invalid table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Cosine similarity of term-frequency vectors over lowercased alphanumeric
/// tokens; 0.0 when either side has no tokens.
pub fn similarity(a: &str, b: &str) -> f64 {
    let tf = |text: &str| {
        let mut counts: HashMap<String, f64> = HashMap::new();
        for t in tokens(text) {
            *counts.entry(t).or_default() += 1.0;
        }
        counts
    };
    let (ta, tb) = (tf(a), tf(b));
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let dot: f64 = ta.iter().filter_map(|(k, v)| tb.get(k).map(|w| v * w)).sum();
    let norm = |m: &HashMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (norm(&ta) * norm(&tb))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub metric_id: String,
    pub value: f64,
}

pub fn score_similarity(a: &str, b: &str) -> SimilarityScore {
    SimilarityScore {
        metric_id: SIMILARITY_METRIC_ID.to_string(),
        value: similarity(a, b),
    }
}

/// Relative improvement in percent, signed so that better is positive.
pub fn improvement_pct(baseline: f64, final_value: f64, direction: Direction) -> Result<f64, EvalError> {
    if baseline == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    let gain = match direction {
        Direction::HigherBetter => final_value - baseline,
        Direction::LowerBetter => baseline - final_value,
    };
    Ok(gain / baseline.abs() * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task: String,
    pub trial_seed: u64,
    pub baseline_value: Option<f64>,
    pub final_value: Option<f64>,
    pub direction: Direction,
    pub outcome: Outcome,
}

impl TrialResult {
    /// Improvement over the baseline; `None` when the trial produced no
    /// comparable final value (aborted, failed or unmeasured).
    pub fn improvement(&self) -> Result<Option<f64>, EvalError> {
        if matches!(self.outcome, Outcome::Aborted | Outcome::Failed { .. } | Outcome::Running) {
            return Ok(None);
        }
        match (self.baseline_value, self.final_value) {
            (Some(b), Some(f)) => improvement_pct(b, f, self.direction).map(Some),
            _ => Ok(None),
        }
    }

    pub fn succeeded(&self, threshold: f64) -> Result<bool, EvalError> {
        Ok(self.improvement()?.is_some_and(|i| i >= threshold))
    }
}

/// Percentage of trials whose improvement reaches `threshold`.
pub fn success_rate(trials: &[TrialResult], threshold: f64) -> Result<f64, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::EmptyTrials);
    }
    let mut hits = 0usize;
    for t in trials {
        if t.succeeded(threshold)? {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / trials.len() as f64)
}

/// Arithmetic mean of a per-task column.
pub fn aggregate_table(per_task: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    mean(per_task.values().copied())
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Result<f64, EvalError> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(EvalError::EmptyMap);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub improvement: f64,
    pub success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_task_improvement: BTreeMap<String, f64>,
    pub per_task_success_rate: BTreeMap<String, f64>,
    pub averages: Averages,
    pub trials: usize,
    pub threshold: f64,
}

impl RunMetrics {
    /// Per-task mean improvement (unmeasured trials count as 0) and success
    /// rate, plus their averages over tasks.
    pub fn compute(trials: &[TrialResult], threshold: f64) -> Result<Self, EvalError> {
        if trials.is_empty() {
            return Err(EvalError::EmptyTrials);
        }
        let mut by_task: BTreeMap<&str, Vec<&TrialResult>> = BTreeMap::new();
        for t in trials {
            by_task.entry(&t.task).or_default().push(t);
        }
        let mut per_task_improvement = BTreeMap::new();
        let mut per_task_success_rate = BTreeMap::new();
        for (task, group) in &by_task {
            let mut values = Vec::new();
            for t in group {
                values.push(t.improvement()?.unwrap_or(0.0));
            }
            per_task_improvement.insert(task.to_string(), mean(values)?);
            let owned: Vec<TrialResult> = group.iter().map(|t| (*t).clone()).collect();
            per_task_success_rate.insert(task.to_string(), success_rate(&owned, threshold)?);
        }
        Ok(Self {
            averages: Averages {
                improvement: aggregate_table(&per_task_improvement)?,
                success: aggregate_table(&per_task_success_rate)?,
            },
            per_task_improvement,
            per_task_success_rate,
            trials: by_task.values().map(Vec::len).max().unwrap_or(0),
            threshold,
        })
    }

    /// The report as CSV: one row per task, then an `Average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,improvement_pct,success_rate_pct\n");
        for (task, imp) in &self.per_task_improvement {
            let rate = self.per_task_success_rate.get(task).copied().unwrap_or(0.0);
            out.push_str(&format!("{},{imp:.2},{rate:.2}\n", csv_field(task)));
        }
        out.push_str(&format!("Average,{:.2},{:.2}\n", self.averages.improvement, self.averages.success));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
