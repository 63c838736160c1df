use serde::{Deserialize, Serialize};

use super::{AgentTurn, ProtocolError};
use crate::llm::{Gateway, GENERATION_TEMPERATURE};
use crate::text::{clip_chars, word_count, HeadedSections};

pub const SUMMARY_TEMPLATE_ID: &str = "step-summary/v1";
pub const MAX_SUMMARY_WORDS: usize = 300;
pub const SUMMARY_TRUNCATION_MARKER: &str = "[truncated]";

const LABELS: [&str; 4] = ["[Reasoning]", "[Action]", "[Observation]", "[Feedback]"];
const OBSERVATION_CHARS_IN_PROMPT: usize = 8_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub reasoning: String,
    pub action: String,
    pub observation: String,
    pub feedback: String,
    /// Words across the four fields, not counting labels or the truncation marker.
    pub word_count: usize,
}

impl StepSummary {
    /// Builds a summary from its four fields, truncated to the word limit.
    pub fn new(reasoning: &str, action: &str, observation: &str, feedback: &str) -> Self {
        Self::from_fields([reasoning.into(), action.into(), observation.into(), feedback.into()]).truncated()
    }

    fn from_fields(fields: [String; 4]) -> Self {
        let word_count = fields.iter().map(|f| word_count(f)).sum();
        let [reasoning, action, observation, feedback] = fields;
        Self {
            reasoning,
            action,
            observation,
            feedback,
            word_count,
        }
    }

    fn fields(&self) -> [&str; 4] {
        [&self.reasoning, &self.action, &self.observation, &self.feedback]
    }

    pub fn render(&self) -> String {
        LABELS
            .iter()
            .zip(self.fields())
            .map(|(label, body)| format!("{label}: {body}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Keeps the first `MAX_SUMMARY_WORDS` words in field order and marks
    /// the field where the cut happened.
    pub fn truncated(&self) -> Self {
        if self.word_count <= MAX_SUMMARY_WORDS {
            return self.clone();
        }
        let mut left = MAX_SUMMARY_WORDS;
        let mut out: [String; 4] = Default::default();
        let mut marked = false;
        for (slot, body) in out.iter_mut().zip(self.fields()) {
            let words: Vec<&str> = body.split_whitespace().collect();
            if words.len() <= left {
                *slot = body.to_string();
                left -= words.len();
                continue;
            }
            let mut kept = words[..left].join(" ");
            if !marked {
                if !kept.is_empty() {
                    kept.push(' ');
                }
                kept.push_str(SUMMARY_TRUNCATION_MARKER);
                marked = true;
            }
            *slot = kept;
            left = 0;
        }
        let [reasoning, action, observation, feedback] = out;
        Self {
            reasoning,
            action,
            observation,
            feedback,
            word_count: MAX_SUMMARY_WORDS,
        }
    }

    /// Summary assembled directly from the turn, for when the model cannot
    /// produce one.
    pub fn mechanical(turn: &AgentTurn, observation: &str, feedback: &str) -> Self {
        let input = serde_json::to_string(&turn.action.input).unwrap_or_default();
        Self::from_fields([
            turn.thought.clone(),
            format!("{} with input {input}", turn.action.name),
            clip_chars(observation.trim(), 1_000, " [...]"),
            feedback.trim().to_string(),
        ])
        .truncated()
    }
}

pub fn parse_summary(text: &str) -> Result<StepSummary, ProtocolError> {
    let sections = HeadedSections::parse(text, &LABELS, false);
    let missing: Vec<&str> = LABELS
        .iter()
        .enumerate()
        .filter(|(i, _)| !sections.found(*i))
        .map(|(_, l)| *l)
        .collect();
    if !missing.is_empty() {
        return Err(ProtocolError::Parse(format!("missing labels {}", missing.join(", "))));
    }
    let body = |i| sections.body(i).unwrap_or("").to_string();
    Ok(StepSummary::from_fields([body(0), body(1), body(2), body(3)]))
}

pub fn summary_prompt(turn: &AgentTurn, observation: &str, feedback: &str) -> String {
    let input = serde_json::to_string_pretty(&turn.action.input).unwrap_or_default();
    format!(
        "Condense one step of an experiment run into a short record for later steps.\n\n\
         Reflection: {}\nThought: {}\nAction: {}\nAction Input: {}\n\n\
         Observation:\n```\n{}\n```\n\nHuman feedback:\n{}\n\n\
         Write fewer than {MAX_SUMMARY_WORDS} words using exactly these four labels:\n\
         [Reasoning]: why the action was taken\n\
         [Action]: the action and its inputs, stated objectively\n\
         [Observation]: the relevant facts in the observation, stated objectively\n\
         [Feedback]: the relevant content of any human feedback, or \"none\"\n\
         Report only what the observation confirms; leave out guesses.\n",
        turn.reflection,
        turn.thought,
        turn.action.name,
        input,
        clip_chars(observation, OBSERVATION_CHARS_IN_PROMPT, "\n[... observation clipped]"),
        if feedback.trim().is_empty() { "none" } else { feedback.trim() },
    )
}

/// Asks the model for a step summary; re-asks once when labels are missing
/// or the summary is too long, then truncates an over-long second answer.
pub fn summarize_step(
    turn: &AgentTurn,
    observation: &str,
    feedback: &str,
    llm: &Gateway,
) -> Result<StepSummary, ProtocolError> {
    let prompt = summary_prompt(turn, observation, feedback);
    let ask = |p: &str| {
        llm.ask(p, SUMMARY_TEMPLATE_ID, GENERATION_TEMPERATURE)
            .map_err(|e| ProtocolError::Gateway(e.to_string()))
    };
    let complaint = match parse_summary(&ask(&prompt)?) {
        Ok(s) if s.word_count <= MAX_SUMMARY_WORDS => return Ok(s),
        Ok(s) => format!("it had {} words but must stay under {MAX_SUMMARY_WORDS}", s.word_count),
        Err(e) => e.to_string(),
    };
    let retry = format!("{prompt}\nYour previous summary was rejected: {complaint}. Write it again.\n");
    Ok(parse_summary(&ask(&retry)?)?.truncated())
}
