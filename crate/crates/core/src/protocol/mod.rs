//! The plain-text turn grammar spoken between the agent and its tools.

mod catalog;
mod lenient;
mod summary;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::HeadedSections;

pub use catalog::*;
pub use lenient::{parse_lenient, parse_object, LenientError};
pub use summary::{
    parse_summary, summarize_step, summary_prompt, StepSummary, MAX_SUMMARY_WORDS, SUMMARY_TEMPLATE_ID,
    SUMMARY_TRUNCATION_MARKER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("tool catalog is empty")]
    EmptyCatalog,
    #[error("tool {0:?} is registered twice")]
    DuplicateTool(String),
    #[error("missing header \"{0}:\"")]
    MissingHeader(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("malformed action input: {0}")]
    MalformedInput(String),
    #[error("could not parse summary: {0}")]
    Parse(String),
    #[error("gateway error: {0}")]
    Gateway(String),
}

pub const TURN_HEADERS: [&str; 7] = [
    "Reflection",
    "Research Plan and Status",
    "Fact Check",
    "Thought",
    "Questions",
    "Action",
    "Action Input",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    pub input: BTreeMap<String, Value>,
}

impl Action {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            input: BTreeMap::new(),
        }
    }

    pub fn with(mut self, field: &str, value: impl Into<Value>) -> Self {
        self.input.insert(field.to_string(), value.into());
        self
    }

    /// Field value as text; numbers and booleans are rendered.
    pub fn text(&self, field: &str) -> Option<String> {
        match self.input.get(field)? {
            Value::String(s) => Some(s.clone()),
            Value::Null => None,
            Value::Array(items) => Some(
                items
                    .iter()
                    .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                    .collect::<Vec<_>>()
                    .join(":"),
            ),
            other => Some(other.to_string()),
        }
    }

    /// Field value as a number; accepts both `"1"` and `1`.
    pub fn number(&self, field: &str) -> Option<f64> {
        match self.input.get(field)? {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn count(&self, field: &str) -> Option<usize> {
        let n = self.number(field)?;
        (n >= 0.0 && n.fract() == 0.0 && n <= usize::MAX as f64).then_some(n as usize)
    }

    /// Colon-separated path list (or a JSON array) as individual entries.
    pub fn paths(&self, field: &str) -> Vec<String> {
        self.text(field)
            .map(|t| t.split(':').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub reflection: String,
    pub plan_status: String,
    pub fact_check: String,
    pub thought: String,
    pub questions: String,
    pub action: Action,
}

fn clean_action_name(raw: &str) -> String {
    let first = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    first.trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c.is_whitespace()).to_string()
}

fn input_block(raw: &str) -> &str {
    let mut block = raw;
    if let Some(pos) = block.find("\nObservation:").or_else(|| block.starts_with("Observation:").then_some(0)) {
        block = &block[..pos];
    }
    let block = block.trim();
    let unfenced = crate::text::strip_code_fence(block).trim();
    unfenced
}

/// Parses one agent response into a structured turn.
pub fn parse_turn(raw: &str, tools: &[ToolSpec]) -> Result<AgentTurn, ProtocolError> {
    let sections = HeadedSections::parse(raw, &TURN_HEADERS, true);
    if let Some(missing) = TURN_HEADERS.iter().enumerate().find(|(i, _)| !sections.found(*i)) {
        return Err(ProtocolError::MissingHeader(missing.1.to_string()));
    }
    let body = |i: usize| sections.body(i).unwrap_or("").to_string();
    let name = clean_action_name(&body(5));
    let Some(spec) = tools.iter().find(|t| t.name == name) else {
        return Err(ProtocolError::UnknownTool(name));
    };
    let block = input_block(sections.raw_body(6).unwrap_or(""));
    let object = parse_object(block).map_err(|e| ProtocolError::MalformedInput(e.to_string()))?;
    let input: BTreeMap<String, Value> = object.into_iter().collect();
    if let Some(field) = spec.required_fields().find(|f| !input.contains_key(*f)) {
        return Err(ProtocolError::MalformedInput(format!(
            "{} requires the field \"{field}\"",
            spec.name
        )));
    }
    Ok(AgentTurn {
        reflection: body(0),
        plan_status: body(1),
        fact_check: body(2),
        thought: body(3),
        questions: body(4),
        action: Action {
            name: spec.name.clone(),
            input,
        },
    })
}

/// Canonical text form of a turn.
pub fn render_turn(turn: &AgentTurn) -> String {
    let input = serde_json::to_string_pretty(&turn.action.input).expect("json values serialize");
    format!(
        "Reflection: {}\nResearch Plan and Status: {}\nFact Check: {}\nThought: {}\nQuestions: {}\nAction: {}\nAction Input: {}\n",
        turn.reflection, turn.plan_status, turn.fact_check, turn.thought, turn.questions, turn.action.name, input
    )
}

/// The response layout the agent is asked to follow.
pub fn format_instructions() -> &'static str {
    "Always answer in exactly this layout:\n\
     Reflection: what the last observation tells you; if something failed, why and how to fix it\n\
     Research Plan and Status: the complete high-level plan with the status of every step and the results \
     confirmed so far. Mark new updates with **double asterisks**; if nothing changed, repeat the previous \
     version unchanged\n\
     Fact Check: each new statement in the plan update, marked as confirmed by an observation or as guessed\n\
     Thought: what you are doing now and why\n\
     Questions: anything you would like a human researcher to answer or advise on\n\
     Action: the name of exactly one tool\n\
     Action Input: the tool input as a JSON object\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn turn_text(action: &str, input: &str) -> String {
        format!(
            "-Reflection: Looking at the files first.\n-Research Plan and Status: 1. inspect\n-Fact Check: none\n\
             -Thought: read train.py\n-Questions: none\n-Action: {action}\n-Action Input: {input}\nObservation:\n```\nignored\n```"
        )
    }

    #[test]
    fn inspect_turn_parses() {
        let raw = turn_text(
            "Inspect Script Lines",
            "{\"script_name\": \"train.py\", \"start\\_line\\_number\": \"1\", \"end_line_number\": \"74\"}",
        );
        let turn = parse_turn(&raw, &registry()).unwrap();
        assert_eq!(turn.action.name, "Inspect Script Lines");
        let expected: BTreeMap<String, Value> = [
            ("script_name", json!("train.py")),
            ("start_line_number", json!("1")),
            ("end_line_number", json!("74")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        assert_eq!(turn.action.input, expected);
        assert_eq!(turn.action.count("end_line_number"), Some(74));
        assert_eq!(turn.plan_status, "1. inspect");
    }

    #[test]
    fn missing_action_header() {
        let raw = "Reflection: a\nResearch Plan and Status: b\nFact Check: c\nThought: d\nQuestions: e\nAction Input: {}";
        assert_eq!(parse_turn(raw, &registry()), Err(ProtocolError::MissingHeader("Action".into())));
    }

    #[test]
    fn sloppy_input_equals_canonical() {
        let sloppy = parse_turn(&turn_text("List Files", "{'dir_path': '.',}"), &registry()).unwrap();
        let clean = parse_turn(&turn_text("List Files", "{\"dir_path\": \".\"}"), &registry()).unwrap();
        assert_eq!(sloppy, clean);
    }

    #[test]
    fn unknown_tool_and_missing_field() {
        let err = parse_turn(&turn_text("Launch Rocket", "{}"), &registry()).unwrap_err();
        assert_eq!(err, ProtocolError::UnknownTool("Launch Rocket".into()));
        let err = parse_turn(&turn_text("Copy File", "{\"source\": \"a\"}"), &registry()).unwrap_err();
        assert!(matches!(err, ProtocolError::MalformedInput(m) if m.contains("destination")));
    }

    #[test]
    fn fenced_multiline_input() {
        let raw = turn_text(
            "Edit Script (AI)",
            "```json\n{\n  \"script_name\": \"train.py\",\n  \"edit_instruction\": \"set LR\nto 0.1\",\n  \"save_name\": \"train.py\"\n}\n```",
        );
        let turn = parse_turn(&raw, &registry()).unwrap();
        assert_eq!(turn.action.text("edit_instruction").unwrap(), "set LR\nto 0.1");
    }

    #[test]
    fn colon_lists() {
        let a = Action::new("x").with("load_dirs", "data/a: data/b").with("n", 3);
        assert_eq!(a.paths("load_dirs"), ["data/a", "data/b"]);
        assert_eq!(a.count("n"), Some(3));
        assert_eq!(a.text("n").unwrap(), "3");
    }

    fn payload() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9 ,.()*]{0,30}(\n[a-z0-9 ,.]{1,20}){0,2}".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(p in proptest::collection::vec(payload(), 5), path in "[a-z]{1,8}") {
            let turn = AgentTurn {
                reflection: p[0].clone(),
                plan_status: p[1].clone(),
                fact_check: p[2].clone(),
                thought: p[3].clone(),
                questions: p[4].clone(),
                action: Action::new(LIST_FILES).with("dir_path", path),
            };
            let back = parse_turn(&render_turn(&turn), &registry()).unwrap();
            prop_assert_eq!(back, turn);
        }

        #[test]
        fn parse_turn_is_total(raw in "\\PC{0,400}") {
            let _ = parse_turn(&raw, &registry());
        }

        #[test]
        fn parse_turn_is_total_near_grammar(parts in proptest::collection::vec(
            prop_oneof![
                Just("Reflection:".to_string()), Just("Action:".to_string()), Just("Action Input:".to_string()),
                Just("Thought:".to_string()), Just("{".to_string()), Just("}".to_string()), Just("\n".to_string()),
                Just("'".to_string()), Just("List Files".to_string()), "\\PC{0,10}"
            ], 0..40)) {
            let _ = parse_turn(&parts.concat(), &registry());
        }
    }
}
