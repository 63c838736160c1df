use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ProtocolError;

pub const LIST_FILES: &str = "List Files";
pub const COPY_FILE: &str = "Copy File";
pub const UNDO_EDIT_SCRIPT: &str = "Undo Edit Script";
pub const EXECUTE_SCRIPT: &str = "Execute Script";
pub const REQUEST_HELP: &str = "Request Help";
pub const FINAL_ANSWER: &str = "Final Answer";
pub const UNDERSTAND_FILE: &str = "Understand File";
pub const INSPECT_SCRIPT_LINES: &str = "Inspect Script Lines";
pub const EDIT_SCRIPT_AI: &str = "Edit Script (AI)";
pub const REFLECTION: &str = "Reflection";
pub const RETRIEVE_DATASET: &str = "Retrieve Dataset";
pub const RETRIEVE_MODEL: &str = "Retrieve Model";
pub const PROCESS_DATASET: &str = "Process Dataset";
pub const TRAIN_MODEL: &str = "Train Model";
pub const EXECUTE_MODEL_ON_TEST_SET: &str = "Execute Model on Test Set";
pub const EVALUATE_MODEL: &str = "Evaluate Model";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputField {
    pub field: String,
    pub description: String,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: Vec<InputField>,
    pub observation: String,
}

impl ToolSpec {
    fn new(name: &str, description: &str, fields: &[(&str, &str)], observation: &str) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            input_schema: fields
                .iter()
                .map(|(f, d)| InputField {
                    field: (*f).into(),
                    description: (*d).into(),
                    required: true,
                })
                .collect(),
            observation: observation.into(),
        }
    }

    /// The usage skeleton shown to the agent for this tool.
    pub fn usage_block(&self) -> String {
        let fields = self
            .input_schema
            .iter()
            .map(|f| format!("            \"{}\": [{}]", f.field, f.description))
            .collect::<Vec<_>>()
            .join(",\n");
        format!(
            "- {}:\n        {}\n        Usage:\n        ```\n        Action: {}\n        Action Input: {{\n{}\n        }}\n        Observation: [{}]\n        ```\n",
            self.name, self.description, self.name, fields, self.observation
        )
    }

    pub fn required_fields(&self) -> impl Iterator<Item = &str> {
        self.input_schema.iter().filter(|f| f.required).map(|f| f.field.as_str())
    }
}

const PATH_HINT: &str = "a file path relative to the workspace root";
const DIRS_HINT: &str = "one or more dataset directories, separated by colons";

/// The sixteen tools available to the experiment agent, in catalog order.
pub fn registry() -> Vec<ToolSpec> {
    vec![
        ToolSpec::new(
            LIST_FILES,
            "Show what a directory contains, to find your way around the workspace.",
            &[("dir_path", "a directory path relative to the workspace root, e.g. \".\" or \"data/raw\"")],
            "the sorted names in dir_path with directories marked by a trailing slash, or an error message if dir_path is invalid",
        ),
        ToolSpec::new(
            COPY_FILE,
            "Duplicate a file under a new path.",
            &[("source", PATH_HINT), ("destination", PATH_HINT)],
            "a success message, or an error message if the file cannot be copied",
        ),
        ToolSpec::new(
            UNDO_EDIT_SCRIPT,
            "Revert the most recent edit made to a script.",
            &[("script_name", PATH_HINT)],
            "the content of the script before the last edit, or an error message if there is nothing to revert",
        ),
        ToolSpec::new(
            EXECUTE_SCRIPT,
            "Run an existing script inside the workspace and capture what it prints.",
            &[("script_name", PATH_HINT)],
            "the output of the script or errors",
        ),
        ToolSpec::new(
            REQUEST_HELP,
            "Ask the human researcher for help. Only do this once the files and tools at hand are clearly not enough, for example when an API reference or a new library is needed.",
            &[("request", "a precise description of what you need")],
            "the response from human",
        ),
        ToolSpec::new(
            FINAL_ANSWER,
            "Submit the final result of the task. You can only submit once, so confirm the goal is met first.",
            &[("final_answer", "a thorough description of the final result")],
            "empty",
        ),
        ToolSpec::new(
            UNDERSTAND_FILE,
            "Have the whole file read and get back the parts that matter for your question. For exact text, prefer Inspect Script Lines.",
            &[
                ("file_name", PATH_HINT),
                ("things_to_look_for", "what to search for and what the answer should contain"),
            ],
            "a description of the relevant content and lines, or an error message if the file does not exist",
        ),
        ToolSpec::new(
            INSPECT_SCRIPT_LINES,
            "Print a range of lines from a script exactly as written. At most 100 lines can be shown per call.",
            &[
                ("script_name", PATH_HINT),
                ("start_line_number", "first line to show, counting from 1"),
                ("end_line_number", "last line to show, inclusive"),
            ],
            "the requested lines, or an error message if the script does not exist or the range is invalid",
        ),
        ToolSpec::new(
            EDIT_SCRIPT_AI,
            "Describe a coherent change to a script and let an assistant model rewrite it. A missing script is created empty first.",
            &[
                ("script_name", PATH_HINT),
                ("edit_instruction", "step-by-step instructions for the change"),
                ("save_name", "where to write the edited script, relative to the workspace root"),
            ],
            "the edited script, which you should check carefully; Undo Edit Script reverts it",
        ),
        ToolSpec::new(
            REFLECTION,
            "Step back and review the history of this run so far.",
            &[("things_to_reflect_on", "what to reflect on and what the reflection should return")],
            "the reflection",
        ),
        ToolSpec::new(
            RETRIEVE_DATASET,
            "Find a dataset that fits a description and save it into the workspace.",
            &[
                ("instruction", "what the dataset must contain and be used for"),
                ("save_dir", "directory to store the dataset in, e.g. data/retrieved/"),
            ],
            "a success message naming the dataset and its splits, or an error message",
        ),
        ToolSpec::new(
            RETRIEVE_MODEL,
            "Find candidate models that fit a description.",
            &[("instruction", "what the model must do")],
            "a ranked list of suitable models",
        ),
        ToolSpec::new(
            PROCESS_DATASET,
            "Transform datasets according to an instruction. Results hold the input text in a `model_input` column and the target in a `model_output` column.",
            &[
                ("instruction", "how to derive model_input and model_output from each row"),
                ("load_dirs", DIRS_HINT),
                ("save_dirs", "output directories, separated by colons, in the same order as load_dirs"),
            ],
            "a success message, or an error message",
        ),
        ToolSpec::new(
            TRAIN_MODEL,
            "Train the task's model on processed datasets with the given hyperparameters.",
            &[
                ("model_name", "name of the model to train"),
                ("load_dirs", DIRS_HINT),
                ("result_dir", "directory for the results; the model is written to {result_dir}/trained_model/"),
                ("epochs", "number of passes over the training data"),
                ("batch_size", "examples per update"),
                ("warmup_steps", "number of warmup steps"),
                ("weight_decay", "weight decay coefficient"),
                ("learning_rate", "optimizer learning rate"),
            ],
            "a success message with training metrics, or an error message",
        ),
        ToolSpec::new(
            EXECUTE_MODEL_ON_TEST_SET,
            "Run a trained model over the test split of each dataset.",
            &[
                ("result_dir", "directory holding the trained model"),
                ("load_dirs", DIRS_HINT),
                ("save_path", "JSON file to write the predictions to"),
                ("batch_size", "examples per prediction batch"),
                ("input_column", "column holding the model input"),
            ],
            "a success message, or an error message",
        ),
        ToolSpec::new(
            EVALUATE_MODEL,
            "Score saved predictions against the test split references.",
            &[
                ("load_dirs", DIRS_HINT),
                ("save_path", "JSON file holding the predictions"),
                ("output_column", "column holding the reference output"),
            ],
            "the values of the evaluation metrics",
        ),
    ]
}

/// Renders every tool's usage block in the given order.
pub fn render_tool_catalog(tools: &[ToolSpec]) -> Result<String, ProtocolError> {
    if tools.is_empty() {
        return Err(ProtocolError::EmptyCatalog);
    }
    let mut seen = HashSet::new();
    for tool in tools {
        if !seen.insert(tool.name.as_str()) {
            return Err(ProtocolError::DuplicateTool(tool.name.clone()));
        }
    }
    Ok(tools.iter().map(ToolSpec::usage_block).collect::<Vec<_>>().join("\n"))
}
