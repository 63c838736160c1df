//! Trials: a baseline measurement on a pristine prototype copy, one agent
//! run in an isolated workspace, and a final measurement.

use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_loop, AgentEnv, AgentError, Outcome, RunConfig, RunState, Toolbox};
use crate::clock::Clock;
use crate::evaluation::TrialResult;
use crate::llm::Gateway;
use crate::protocol::StepSummary;
use crate::store::{EventKind, NewRun, RunStore, StoreError, TraceEvent};
use crate::toolkit::{DatasetHub, ModelHub, TaskPackage};
use crate::workspace::{copy_tree, ExecutionPolicy, Workspace, WorkspaceError};

pub const BASELINE_DIR: &str = "baseline";
pub const WORKSPACE_DIR: &str = "workspace";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("could not prepare {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The value of the last `<metric>: <number>` (or `=`) line in `output`.
pub fn parse_metric(output: &str, metric: &str) -> Option<f64> {
    let pattern = format!(r"(?i)^\s*{}\s*[:=]\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$", regex::escape(metric));
    let re = Regex::new(&pattern).expect("metric pattern compiles");
    output
        .lines()
        .rev()
        .find_map(|line| re.captures(line).and_then(|c| c[1].parse().ok()))
}

/// Runs `command` (a script path, optionally followed by arguments) in a
/// workspace and reads the metric from its stdout.
pub fn measure(ws: &Workspace, command: &str, metric: &str) -> Result<Option<f64>, WorkspaceError> {
    let mut parts = command.split_whitespace();
    let script = parts.next().unwrap_or_default();
    let args: Vec<String> = parts.map(str::to_string).collect();
    let result = ws.execute_with_args(script, &args)?;
    if !result.success() {
        tracing::warn!(command, output = %result.render(), "metric command failed");
        return Ok(None);
    }
    Ok(parse_metric(&result.stdout, metric))
}

/// Everything one trial needs besides the run configuration.
pub struct TrialEnv {
    pub store: Arc<RunStore>,
    pub llm: Arc<Gateway>,
    /// Clock for the run's trace and edit history.
    pub clock: Arc<dyn Clock>,
    pub model_hub: Option<Arc<dyn ModelHub>>,
    pub dataset_hub: Option<Arc<dyn DatasetHub>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub run_id: String,
    pub state: RunState,
    pub result: TrialResult,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fresh_copy(package: &TaskPackage, dest: &Path, policy: &ExecutionPolicy, clock: Arc<dyn Clock>) -> Result<Workspace, HarnessError> {
    copy_tree(&package.prototype_dir(), dest).map_err(io_err(dest))?;
    Ok(Workspace::open(dest, policy.clone())?.with_clock(clock))
}

/// Creates a run, measures the baseline, drives the agent and measures the
/// final workspace. Aborted and failed runs are not measured.
pub fn run_trial(config: &RunConfig, env: TrialEnv) -> Result<TrialReport, HarnessError> {
    let package = config.validate()?;
    let meta = package.meta.clone();
    let (run_id, inbox) = env.store.create_run(
        NewRun {
            task: meta.name.clone(),
            provider: config.provider.clone(),
            trial_seed: config.trial_seed,
            step_budget: config.step_budget,
            config_digest: config.digest(),
        },
        env.clock.clone(),
    )?;
    tracing::info!(%run_id, task = %meta.name, seed = config.trial_seed, "trial started");
    let run_dir = env.store.run_dir(&run_id);

    let baseline_ws = fresh_copy(&package, &run_dir.join(BASELINE_DIR), &config.policy, env.clock.clone())?;
    let baseline_value = measure(&baseline_ws, &meta.baseline_command, &meta.metric)?;

    let ws = Arc::new(fresh_copy(&package, &run_dir.join(WORKSPACE_DIR), &config.policy, env.clock.clone())?);
    let model_hub = env.model_hub.or_else(|| package.model_hub().map(|h| Arc::new(h) as Arc<dyn ModelHub>));
    let dataset_hub = env.dataset_hub.or_else(|| package.dataset_hub().map(|h| Arc::new(h) as Arc<dyn DatasetHub>));
    let toolbox = Toolbox::new(ws.clone(), env.llm.clone(), package, config.idea.clone()).with_hubs(model_hub, dataset_hub);
    let state = run_loop(
        config,
        AgentEnv {
            store: env.store.clone(),
            run_id: run_id.clone(),
            inbox,
            llm: env.llm,
            toolbox,
        },
    )?;

    let final_value = match state.outcome {
        Outcome::Completed { .. } | Outcome::BudgetExhausted => measure(&ws, meta.eval_command(), &meta.metric)?,
        _ => None,
    };
    tracing::info!(%run_id, outcome = state.outcome.label(), ?baseline_value, ?final_value, "trial finished");
    Ok(TrialReport {
        run_id,
        result: TrialResult {
            task: meta.name,
            trial_seed: config.trial_seed,
            baseline_value,
            final_value,
            direction: meta.direction,
            outcome: state.outcome.clone(),
        },
        state,
    })
}

fn text_field<'a>(payload: &'a serde_json::Value, key: &str) -> &'a str {
    payload.get(key).and_then(|v| v.as_str()).unwrap_or_default()
}

/// Human-readable transcript of a trace: one block per step, with feedback,
/// control and state events shown where they occurred.
pub fn render_transcript(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    let mut current_step: Option<u64> = None;
    for event in events {
        let p = &event.payload;
        if let Some(step) = p.get("step").and_then(|v| v.as_u64()) {
            if current_step != Some(step) {
                current_step = Some(step);
                out.push_str(&format!("=== Step {step} ===\n"));
            }
        }
        let block = match event.kind {
            EventKind::Turn => format!(
                "[{}] turn (attempt {}):\n{}",
                event.seq,
                p.get("attempt").and_then(|v| v.as_u64()).unwrap_or(1),
                text_field(p, "text").trim_end()
            ),
            EventKind::Action => format!(
                "[{}] action: {}\n{}",
                event.seq,
                text_field(p, "name"),
                p.get("input").map(|v| v.to_string()).unwrap_or_default()
            ),
            EventKind::Observation => format!("[{}] observation:\n{}", event.seq, text_field(p, "text").trim_end()),
            EventKind::Summary => {
                let body = p
                    .get("summary")
                    .cloned()
                    .and_then(|v| serde_json::from_value::<StepSummary>(v).ok())
                    .map(|s| s.render())
                    .unwrap_or_else(|| p.to_string());
                format!("[{}] summary:\n{body}", event.seq)
            }
            EventKind::Feedback => format!(
                "[{}] feedback from {}:\n{}",
                event.seq,
                text_field(p, "author"),
                text_field(p, "text").trim_end()
            ),
            EventKind::Control => format!("[{}] control: {}", event.seq, text_field(p, "action")),
            EventKind::StateChange => {
                let outcome = p.get("outcome").and_then(|o| o.get("status")).and_then(|v| v.as_str()).unwrap_or("?");
                let reason = p
                    .get("outcome")
                    .and_then(|o| o.get("reason"))
                    .and_then(|v| v.as_str())
                    .map(|r| format!(": {r}"))
                    .unwrap_or_default();
                format!(
                    "[{}] state: {outcome} at step {}{}{reason}",
                    event.seq,
                    p.get("step_index").and_then(|v| v.as_u64()).unwrap_or(0),
                    if p.get("awaiting_feedback").and_then(|v| v.as_bool()) == Some(true) { " (awaiting feedback)" } else { "" }
                )
            }
        };
        out.push_str(&block);
        out.push_str("\n\n");
    }
    out
}
