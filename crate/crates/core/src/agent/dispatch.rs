use std::sync::Arc;

use super::{AgentError, ExperimentalSetup};
use crate::idea::ResearchIdea;
use crate::llm::{Gateway, GENERATION_TEMPERATURE};
use crate::protocol::*;
use crate::text::{clip_chars, strip_code_fence};
use crate::toolkit::{
    evaluate_predictions, execute_on_test, post_checkup, process_dataset, retrieve_dataset, retrieve_model,
    train_model, DatasetHub, Hyperparameters, ModelHub, Requirements, TaskPackage, ToolkitError,
};
use crate::workspace::{Workspace, WorkspaceError};

pub const SUBMIT_ONCE_NOTICE: &str =
    "A final answer was already submitted. You can only submit once; this call was ignored.";
const UNDERSTAND_TEMPLATE_ID: &str = "understand-file/v1";
const REFLECTION_TEMPLATE_ID: &str = "reflection/v1";
const EDIT_TEMPLATE_ID: &str = "edit-script/v1";
const FILE_CHARS_IN_PROMPT: usize = 30_000;
const EDIT_ECHO_CHARS: usize = 6_000;

/// Result of executing one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub observation: String,
    pub final_answer: Option<String>,
}

impl Dispatch {
    fn observe(text: impl Into<String>) -> Self {
        Self {
            observation: text.into(),
            final_answer: None,
        }
    }
}

/// A failure inside a tool that the agent should see and may recover from,
/// or an infrastructure fault that ends the run.
enum ToolFailure {
    Tool(String),
    Fault(String),
}

impl From<WorkspaceError> for ToolFailure {
    fn from(e: WorkspaceError) -> Self {
        Self::Tool(e.to_string())
    }
}

impl From<ToolkitError> for ToolFailure {
    fn from(e: ToolkitError) -> Self {
        match e {
            ToolkitError::Gateway(g) => Self::Fault(g.to_string()),
            other => Self::Tool(other.to_string()),
        }
    }
}

type ToolResult = Result<String, ToolFailure>;

fn required_text(action: &Action, field: &str) -> Result<String, ToolFailure> {
    action
        .text(field)
        .ok_or_else(|| ToolFailure::Tool(format!("missing input field \"{field}\"")))
}

fn required_count(action: &Action, field: &str) -> Result<u64, ToolFailure> {
    action
        .count(field)
        .map(|n| n as u64)
        .ok_or_else(|| ToolFailure::Tool(format!("\"{field}\" must be a non-negative whole number")))
}

fn required_number(action: &Action, field: &str) -> Result<f64, ToolFailure> {
    action
        .number(field)
        .ok_or_else(|| ToolFailure::Tool(format!("\"{field}\" must be a number")))
}

/// Executes actions against the workspace, the gateway and the task toolkit.
pub struct Toolbox {
    ws: Arc<Workspace>,
    llm: Arc<Gateway>,
    package: TaskPackage,
    idea: ResearchIdea,
    model_hub: Option<Arc<dyn ModelHub>>,
    dataset_hub: Option<Arc<dyn DatasetHub>>,
    tools: Vec<ToolSpec>,
    setup: ExperimentalSetup,
    submitted: bool,
}

impl Toolbox {
    pub fn new(ws: Arc<Workspace>, llm: Arc<Gateway>, package: TaskPackage, idea: ResearchIdea) -> Self {
        let setup = ExperimentalSetup {
            code: ws.root().to_path_buf(),
            model: None,
            dataset: None,
        };
        Self {
            ws,
            llm,
            package,
            idea,
            model_hub: None,
            dataset_hub: None,
            tools: registry(),
            setup,
            submitted: false,
        }
    }

    pub fn with_hubs(mut self, models: Option<Arc<dyn ModelHub>>, datasets: Option<Arc<dyn DatasetHub>>) -> Self {
        self.model_hub = models;
        self.dataset_hub = datasets;
        self
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn package(&self) -> &TaskPackage {
        &self.package
    }

    pub fn setup(&self) -> &ExperimentalSetup {
        &self.setup
    }

    pub fn submitted(&self) -> bool {
        self.submitted
    }

    /// Runs one action. Tool errors come back as observations; only
    /// infrastructure faults are returned as errors.
    pub fn dispatch(&mut self, action: &Action, history: &[StepSummary]) -> Result<Dispatch, AgentError> {
        if action.name == FINAL_ANSWER {
            if self.submitted {
                return Ok(Dispatch::observe(SUBMIT_ONCE_NOTICE));
            }
            self.submitted = true;
            let answer = action.text("final_answer").unwrap_or_default();
            return Ok(Dispatch {
                observation: "Final answer submitted.".into(),
                final_answer: Some(answer),
            });
        }
        let result = match action.name.as_str() {
            LIST_FILES => self.list_files(action),
            COPY_FILE => self.copy_file(action),
            UNDO_EDIT_SCRIPT => self.undo(action),
            EXECUTE_SCRIPT => self.execute(action),
            REQUEST_HELP => Ok("No researcher is attached to this run; continue on your own.".into()),
            UNDERSTAND_FILE => self.understand(action),
            INSPECT_SCRIPT_LINES => self.inspect(action),
            EDIT_SCRIPT_AI => self.edit(action),
            REFLECTION => self.reflect(action, history),
            RETRIEVE_DATASET => self.retrieve_dataset(action),
            RETRIEVE_MODEL => self.retrieve_model(action),
            PROCESS_DATASET => self.process(action),
            TRAIN_MODEL => self.train(action),
            EXECUTE_MODEL_ON_TEST_SET => self.execute_model(action),
            EVALUATE_MODEL => self.evaluate(action),
            other => {
                let names: Vec<&str> = self.tools.iter().map(|t| t.name.as_str()).collect();
                Err(ToolFailure::Tool(format!(
                    "there is no tool named {other:?}. Available tools: {}",
                    names.join(", ")
                )))
            }
        };
        match result {
            Ok(observation) => Ok(Dispatch::observe(observation)),
            Err(ToolFailure::Tool(msg)) => Ok(Dispatch::observe(format!("Error: {msg}"))),
            Err(ToolFailure::Fault(msg)) => Err(AgentError::Fault(msg)),
        }
    }

    fn ask(&self, prompt: &str, tag: &str) -> Result<String, ToolFailure> {
        self.llm
            .ask(prompt, tag, GENERATION_TEMPERATURE)
            .map_err(|e| ToolFailure::Fault(e.to_string()))
    }

    fn list_files(&self, action: &Action) -> ToolResult {
        let dir = action.text("dir_path").unwrap_or_else(|| ".".into());
        let entries = self.ws.list_files(&dir)?;
        Ok(if entries.is_empty() { format!("{dir} is empty") } else { entries.join("\n") })
    }

    fn copy_file(&self, action: &Action) -> ToolResult {
        let source = required_text(action, "source")?;
        let destination = required_text(action, "destination")?;
        self.ws.copy_file(&source, &destination)?;
        Ok(format!("File {source} copied to {destination}"))
    }

    fn undo(&self, action: &Action) -> ToolResult {
        let script = required_text(action, "script_name")?;
        let content = self.ws.undo_edit(&script)?;
        Ok(format!("Content of {script} after undo:\n{content}"))
    }

    fn execute(&self, action: &Action) -> ToolResult {
        let script = required_text(action, "script_name")?;
        let result = self.ws.execute_script(&script)?;
        let output = result.render();
        Ok(format!(
            "The script has been executed. Here is the output:\n{}",
            if output.trim().is_empty() { "(no output)" } else { &output }
        ))
    }

    fn inspect(&self, action: &Action) -> ToolResult {
        let script = required_text(action, "script_name")?;
        let start = required_count(action, "start_line_number")? as usize;
        let end = required_count(action, "end_line_number")? as usize;
        let lines = self.ws.read_lines(&script, start, end)?;
        let total = self.ws.read_text(&script)?.lines().count();
        Ok(format!("Here are the lines (the file ends at line {total}):\n\n{lines}"))
    }

    fn understand(&self, action: &Action) -> ToolResult {
        let file = required_text(action, "file_name")?;
        let query = required_text(action, "things_to_look_for")?;
        let content = self.ws.read_text(&file)?;
        let prompt = format!(
            "Read the file below and report what it says about the request. Cite line numbers where it helps, \
             and say plainly when the file does not contain something.\n\n\
             Request: {query}\n\nFile {file}:\n```\n{}\n```\n",
            clip_chars(&content, FILE_CHARS_IN_PROMPT, "\n[... file clipped]")
        );
        self.ask(&prompt, UNDERSTAND_TEMPLATE_ID)
    }

    fn edit(&self, action: &Action) -> ToolResult {
        let script = required_text(action, "script_name")?;
        let instruction = required_text(action, "edit_instruction")?;
        let save = required_text(action, "save_name")?;
        let current = if self.ws.exists(&script) { self.ws.read_text(&script)? } else { String::new() };
        let prompt = format!(
            "Rewrite the script below according to the instruction. Reply with the complete new script \
             inside a single code block and nothing else.\n\n\
             Instruction: {instruction}\n\nScript {script}:\n```\n{current}\n```\n"
        );
        let reply = self.ask(&prompt, EDIT_TEMPLATE_ID)?;
        let mut edited = strip_code_fence(reply.trim()).to_string();
        if !edited.ends_with('\n') {
            edited.push('\n');
        }
        self.ws.write_with_history(&save, edited.as_bytes(), Some(&instruction))?;
        Ok(format!(
            "The edited file is saved to {save}. Here is its content; check that the edit is correct:\n{}",
            clip_chars(&edited, EDIT_ECHO_CHARS, "\n[... content clipped]")
        ))
    }

    fn reflect(&self, action: &Action, history: &[StepSummary]) -> ToolResult {
        let topic = required_text(action, "things_to_reflect_on")?;
        let steps: Vec<String> = history
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Step {}:\n{}", i + 1, s.render()))
            .collect();
        let prompt = format!(
            "You are helping with an experiment on this idea:\n{}\n\n\
             Progress so far:\n{}\n\nReflect on the following and answer concretely: {topic}\n",
            self.idea.hypothesis.render(),
            if steps.is_empty() { "(no steps yet)".to_string() } else { steps.join("\n\n") }
        );
        self.ask(&prompt, REFLECTION_TEMPLATE_ID)
    }

    fn retrieve_dataset(&mut self, action: &Action) -> ToolResult {
        let instruction = required_text(action, "instruction")?;
        let save_dir = required_text(action, "save_dir")?;
        let hub = self
            .dataset_hub
            .clone()
            .ok_or_else(|| ToolFailure::Tool("no dataset hub is configured for this task".into()))?;
        let dest = self.ws.resolve(&save_dir)?;
        let candidate = retrieve_dataset(&instruction, &dest, hub.as_ref())?;
        let report = post_checkup(&candidate, &Requirements::from_plan(&self.idea.plan));
        let splits: Vec<String> = candidate.splits.iter().map(|s| format!("{} ({} rows)", s.name, s.row_count)).collect();
        let text = format!(
            "Dataset {} saved to {save_dir} with splits {} and columns {}.\n{}",
            candidate.name,
            splits.join(", "),
            candidate.columns.join(", "),
            report.render()
        );
        self.setup.dataset = Some(candidate);
        Ok(text)
    }

    fn retrieve_model(&mut self, action: &Action) -> ToolResult {
        let instruction = required_text(action, "instruction")?;
        let hub = self
            .model_hub
            .clone()
            .ok_or_else(|| ToolFailure::Tool("no model hub is configured for this task".into()))?;
        let ranked = retrieve_model(&instruction, hub.as_ref(), false)?;
        if ranked.is_empty() {
            return Ok(format!("No model matched: {instruction}"));
        }
        let lines: Vec<String> = ranked
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{}. {} (score {}): {}", i + 1, m.name, m.score, m.description))
            .collect();
        self.setup.model = ranked.into_iter().next();
        Ok(format!("Candidate models, best first:\n{}", lines.join("\n")))
    }

    fn process(&self, action: &Action) -> ToolResult {
        let instruction = required_text(action, "instruction")?;
        let report = process_dataset(
            &instruction,
            &action.paths("load_dirs"),
            &action.paths("save_dirs"),
            &self.llm,
            &self.ws,
        )?;
        Ok(report.render())
    }

    fn train(&self, action: &Action) -> ToolResult {
        let model_name = required_text(action, "model_name")?;
        let result_dir = required_text(action, "result_dir")?;
        let hp = Hyperparameters {
            epochs: required_count(action, "epochs")?,
            batch_size: required_count(action, "batch_size")?,
            warmup_steps: required_count(action, "warmup_steps")?,
            weight_decay: required_number(action, "weight_decay")?,
            learning_rate: required_number(action, "learning_rate")?,
        };
        let report = train_model(&self.package, &model_name, &hp, &action.paths("load_dirs"), &result_dir, &self.ws)?;
        Ok(report.render())
    }

    fn execute_model(&self, action: &Action) -> ToolResult {
        let result_dir = required_text(action, "result_dir")?;
        let save_path = required_text(action, "save_path")?;
        let batch_size = required_count(action, "batch_size")?;
        let input_column = required_text(action, "input_column")?;
        let records = execute_on_test(
            &self.package,
            &result_dir,
            &action.paths("load_dirs"),
            &save_path,
            batch_size,
            &input_column,
            &self.ws,
        )?;
        Ok(format!("{} predictions saved to {save_path}", records.len()))
    }

    fn evaluate(&self, action: &Action) -> ToolResult {
        let save_path = required_text(action, "save_path")?;
        let output_column = required_text(action, "output_column")?;
        let scores = evaluate_predictions(
            &self.package.meta.metric,
            &action.paths("load_dirs"),
            &save_path,
            &output_column,
            &self.ws,
        )?;
        let lines: Vec<String> = scores.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        Ok(lines.join("\n"))
    }
}
