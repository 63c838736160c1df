use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{mean, EvalError};
use crate::idea::ResearchIdea;
use crate::llm::{Gateway, SCORING_TEMPERATURE};

pub const SCORECARD_TEMPLATE_ID: &str = "idea-review/v1";
pub const HYPOTHESIS_CRITERIA: [&str; 5] = ["clarity", "validity", "rigor", "innovativeness", "generalizability"];
pub const DESIGN_CRITERIA: [&str; 5] = ["clarity", "validity", "robustness", "feasibility", "reproducibility"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reviewer {
    Human,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Hypothesis,
    ExperimentDesign,
}

impl Target {
    pub fn criteria(self) -> [&'static str; 5] {
        match self {
            Self::Hypothesis => HYPOTHESIS_CRITERIA,
            Self::ExperimentDesign => DESIGN_CRITERIA,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Hypothesis => "hypothesis",
            Self::ExperimentDesign => "experiment_design",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeaScorecard {
    pub criteria: BTreeMap<String, u8>,
    pub reviewer: Reviewer,
    pub target: Target,
}

impl IdeaScorecard {
    /// Checks the criterion set against the target and every score against 1..5.
    pub fn new(criteria: BTreeMap<String, u8>, reviewer: Reviewer, target: Target) -> Result<Self, EvalError> {
        let mut expected: Vec<&str> = target.criteria().to_vec();
        expected.sort_unstable();
        let found: Vec<&str> = criteria.keys().map(String::as_str).collect();
        if found != expected {
            return Err(EvalError::CriteriaMismatch {
                target: target.label().into(),
                found: criteria.keys().cloned().collect(),
            });
        }
        if let Some((c, s)) = criteria.iter().find(|(_, s)| !(1..=5).contains(*s)) {
            return Err(EvalError::ScoreOutOfRange {
                criterion: c.clone(),
                score: *s as i64,
            });
        }
        Ok(Self {
            criteria,
            reviewer,
            target,
        })
    }

    pub fn mean(&self) -> f64 {
        mean(self.criteria.values().map(|s| *s as f64)).expect("scorecards hold five criteria")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub reviewer: Reviewer,
    pub target: Target,
    pub criterion: String,
    pub score: u8,
}

/// Flattens scorecards into one record per criterion.
pub fn scorecard_records(cards: &[IdeaScorecard]) -> Vec<ScoreRecord> {
    cards
        .iter()
        .flat_map(|c| {
            c.criteria.iter().map(|(criterion, score)| ScoreRecord {
                reviewer: c.reviewer,
                target: c.target,
                criterion: criterion.clone(),
                score: *score,
            })
        })
        .collect()
}

pub fn scorecard_prompt(idea: &ResearchIdea, target: Target) -> String {
    let (what, body) = match target {
        Target::Hypothesis => ("research hypothesis", idea.hypothesis.render()),
        Target::ExperimentDesign => ("experiment design", idea.plan.render()),
    };
    let lines: Vec<String> = target.criteria().iter().map(|c| format!("{c}: <1-5>")).collect();
    format!(
        "Act as a careful reviewer of a {what} derived from the paper \"{}\".\n\n{body}\n\
         Rate it on each criterion with a whole number from 1 (poor) to 5 (excellent).\n\
         Answer with exactly these lines and nothing else:\n{}\n",
        idea.context.paper.title,
        lines.join("\n")
    )
}

/// Reads `criterion: N` lines. Unparseable or missing criteria are errors;
/// range is checked separately.
pub fn parse_scores(text: &str, target: Target) -> Result<BTreeMap<String, i64>, EvalError> {
    let mut scores = BTreeMap::new();
    for criterion in target.criteria() {
        let value = text.lines().find_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*', '#', ' ']);
            let (name, rest) = line.split_once(':')?;
            if name.trim().trim_matches('*').to_lowercase() != criterion {
                return None;
            }
            let digits: String = rest
                .trim()
                .trim_start_matches('*')
                .trim()
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '-')
                .collect();
            digits.parse::<i64>().ok()
        });
        match value {
            Some(v) => {
                scores.insert(criterion.to_string(), v);
            }
            None => return Err(EvalError::Parse(format!("no score for {criterion}"))),
        }
    }
    Ok(scores)
}

fn in_range(scores: BTreeMap<String, i64>) -> Result<BTreeMap<String, u8>, EvalError> {
    scores
        .into_iter()
        .map(|(c, s)| match u8::try_from(s) {
            Ok(v) if (1..=5).contains(&v) => Ok((c, v)),
            _ => Err(EvalError::ScoreOutOfRange { criterion: c, score: s }),
        })
        .collect()
}

/// Scores one part of an idea with an LLM reviewer; out-of-range scores are
/// re-asked once and then rejected.
pub fn score_idea(idea: &ResearchIdea, target: Target, llm: &Gateway) -> Result<IdeaScorecard, EvalError> {
    let prompt = scorecard_prompt(idea, target);
    let first = parse_scores(&llm.ask(&prompt, SCORECARD_TEMPLATE_ID, SCORING_TEMPERATURE)?, target)?;
    let scores = match in_range(first) {
        Ok(s) => s,
        Err(e) => {
            let retry = format!("{prompt}\nYour previous answer was rejected: {e}. Use whole numbers from 1 to 5.\n");
            in_range(parse_scores(&llm.ask(&retry, SCORECARD_TEMPLATE_ID, SCORING_TEMPERATURE)?, target)?)?
        }
    };
    IdeaScorecard::new(scores, Reviewer::Llm, target)
}
