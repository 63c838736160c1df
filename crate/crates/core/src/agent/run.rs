use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;

use super::dispatch::Toolbox;
use super::prompt::{build_step_prompt, research_problem, PromptInputs};
use super::{AgentError, Outcome, RunConfig, RunState};
use crate::llm::{Gateway, GENERATION_TEMPERATURE};
use crate::protocol::{parse_turn, render_tool_catalog, summarize_step, StepSummary, REQUEST_HELP};
use crate::store::{ControlAction, EventKind, Inbound, RunStore};

pub const STEP_TEMPLATE_ID: &str = "agent-step/v1";

/// Everything a run needs besides its configuration.
pub struct AgentEnv {
    pub store: Arc<RunStore>,
    pub run_id: String,
    pub inbox: Receiver<Inbound>,
    pub llm: Arc<Gateway>,
    pub toolbox: Toolbox,
}

/// How a Request Help wait ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HelpReply {
    Answered(String),
    TimedOut,
    Aborted,
}

fn fault(e: impl std::fmt::Display) -> AgentError {
    AgentError::Fault(e.to_string())
}

fn state_change(store: &RunStore, state: &RunState) -> Result<(), AgentError> {
    let mut payload = serde_json::to_value(state).expect("state serializes");
    if let Some(map) = payload.as_object_mut() {
        map.remove("run_id");
    }
    store.append_event(&state.run_id, EventKind::StateChange, payload).map_err(fault)?;
    store.update_state(state).map_err(fault)
}

/// Blocks until a researcher answers, the wait times out, or the run is
/// aborted. Pause and resume only toggle the paused flag while waiting.
pub fn handle_request_help(
    store: &RunStore,
    inbox: &Receiver<Inbound>,
    state: &mut RunState,
    timeout: Duration,
) -> Result<HelpReply, AgentError> {
    state.awaiting_feedback = true;
    state_change(store, state)?;
    let deadline = Instant::now() + timeout;
    let reply = loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match inbox.recv_timeout(left) {
            Ok(Inbound::Feedback { message, .. }) => break HelpReply::Answered(message.text),
            Ok(Inbound::Control { action: ControlAction::Abort, .. }) => break HelpReply::Aborted,
            Ok(Inbound::Control { action, .. }) => {
                state.paused = action == ControlAction::Pause;
                state_change(store, state)?;
            }
            Err(RecvTimeoutError::Timeout) => break HelpReply::TimedOut,
            Err(RecvTimeoutError::Disconnected) => return Err(fault("run queue closed while waiting for help")),
        }
    };
    state.awaiting_feedback = false;
    if reply != HelpReply::Aborted {
        state_change(store, state)?;
    }
    Ok(reply)
}

enum Drain {
    Continue,
    Abort,
}

/// Takes queued messages without blocking, except while paused.
fn drain_inbox(env: &AgentEnv, state: &mut RunState, feedback: &mut Vec<String>) -> Result<Drain, AgentError> {
    loop {
        let next = if state.paused {
            match env.inbox.recv() {
                Ok(m) => m,
                Err(_) => return Err(fault("run queue closed while paused")),
            }
        } else {
            match env.inbox.try_recv() {
                Ok(m) => m,
                Err(_) => return Ok(Drain::Continue),
            }
        };
        match next {
            Inbound::Feedback { message, .. } => feedback.push(message.text),
            Inbound::Control { action: ControlAction::Abort, .. } => return Ok(Drain::Abort),
            Inbound::Control { action, .. } => {
                let paused = action == ControlAction::Pause;
                if paused != state.paused {
                    state.paused = paused;
                    state_change(&env.store, state)?;
                }
            }
        }
    }
}

/// Drives the agent until a terminal outcome and returns the final state.
/// The trace holds, per step, the raw turn(s), the action, the observation
/// and the summary.
pub fn run_loop(config: &RunConfig, mut env: AgentEnv) -> Result<RunState, AgentError> {
    let store = env.store.clone();
    let run_id = env.run_id.clone();
    let append = |kind: EventKind, payload: serde_json::Value| store.append_event(&run_id, kind, payload).map_err(fault);
    let catalog = render_tool_catalog(env.toolbox.tools()).map_err(fault)?;
    let problem = research_problem(&env.toolbox.package().meta);
    let mut state = RunState::new(&run_id);
    let mut summaries: Vec<StepSummary> = Vec::new();
    let mut last_observation: Option<String> = None;
    let mut pending_feedback: Vec<String> = Vec::new();

    let outcome = loop {
        if let Drain::Abort = drain_inbox(&env, &mut state, &mut pending_feedback)? {
            break Outcome::Aborted;
        }
        if state.step_index >= config.step_budget {
            break Outcome::BudgetExhausted;
        }
        let feedback = pending_feedback.join("\n");
        pending_feedback.clear();
        let shown_observation = match (&last_observation, feedback.is_empty()) {
            (_, true) => last_observation.clone(),
            (Some(obs), false) => Some(format!("Feedback from the researcher: {feedback}\n\n{obs}")),
            (None, false) => Some(format!("Feedback from the researcher: {feedback}")),
        };
        let prompt = build_step_prompt(&PromptInputs {
            catalog: &catalog,
            problem: &problem,
            idea: &config.idea,
            summaries: &summaries,
            last_observation: shown_observation.as_deref(),
            step_index: state.step_index,
            step_budget: config.step_budget,
            char_budget: config.prompt_budget,
        });
        let step = state.step_index + 1;

        let mut parsed = None;
        let mut complaint = String::new();
        for attempt in 0..=config.retry_budget {
            let asked = if attempt == 0 {
                prompt.clone()
            } else {
                format!(
                    "{prompt}\n\nYour previous response was rejected: {complaint}. \
                     Answer again using every header of the response format.\n"
                )
            };
            let reply = match env.llm.ask(&asked, STEP_TEMPLATE_ID, GENERATION_TEMPERATURE) {
                Ok(r) => r,
                Err(e) => {
                    parsed = Some(Err(e.to_string()));
                    break;
                }
            };
            append(EventKind::Turn, json!({"step": step, "attempt": attempt, "text": reply}))?;
            match parse_turn(&reply, env.toolbox.tools()) {
                Ok(turn) => {
                    parsed = Some(Ok(turn));
                    break;
                }
                Err(e) => complaint = e.to_string(),
            }
        }
        let turn = match parsed {
            Some(Err(reason)) => break Outcome::Failed { reason },
            Some(Ok(turn)) => turn,
            None => {
                state.step_index = step;
                let observation = format!(
                    "Your response could not be used: {complaint}. Use the exact response format, including every header."
                );
                append(EventKind::Observation, json!({"step": step, "text": observation}))?;
                let summary = StepSummary::new("The response was malformed.", "none", &observation, &feedback);
                append(EventKind::Summary, json!({"step": step, "summary": summary}))?;
                summaries.push(summary);
                last_observation = Some(observation);
                store.update_state(&state).map_err(fault)?;
                continue;
            }
        };
        state.step_index = step;
        state.plan_status = turn.plan_status.clone();
        append(
            EventKind::Action,
            json!({"step": step, "name": turn.action.name, "input": turn.action.input, "questions": turn.questions}),
        )?;
        if !turn.questions.trim().is_empty() {
            tracing::debug!(step, questions = %turn.questions, "agent questions");
        }

        let mut final_answer = None;
        let mut step_feedback = feedback.clone();
        let observation = if turn.action.name == REQUEST_HELP {
            let request = turn.action.text("request").unwrap_or_default();
            tracing::info!(step, %request, "agent requested help");
            match handle_request_help(&store, &env.inbox, &mut state, config.feedback_timeout)? {
                HelpReply::Answered(text) => {
                    step_feedback = text.clone();
                    text
                }
                HelpReply::TimedOut => {
                    "No help arrived before the wait timed out. Continue with the tools you have.".to_string()
                }
                HelpReply::Aborted => break Outcome::Aborted,
            }
        } else {
            match env.toolbox.dispatch(&turn.action, &summaries) {
                Ok(d) => {
                    final_answer = d.final_answer;
                    d.observation
                }
                Err(e) => break Outcome::Failed { reason: e.to_string() },
            }
        };
        append(EventKind::Observation, json!({"step": step, "text": observation}))?;
        let summary = summarize_step(&turn, &observation, &step_feedback, &env.llm)
            .unwrap_or_else(|_| StepSummary::mechanical(&turn, &observation, &step_feedback));
        append(EventKind::Summary, json!({"step": step, "summary": summary}))?;
        summaries.push(summary);
        last_observation = Some(observation);
        store.update_state(&state).map_err(fault)?;
        if let Some(answer) = final_answer {
            break Outcome::Completed { answer };
        }
    };

    state.outcome = outcome;
    state.awaiting_feedback = false;
    state.paused = false;
    state_change(&store, &state)?;
    Ok(state)
}
