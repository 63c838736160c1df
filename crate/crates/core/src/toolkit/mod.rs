//! Experiment utilities behind the data and model tools: hubs, datasets,
//! training, prediction and metrics over task packages.

mod dataset;
mod hub;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Direction;
use crate::llm::GatewayError;
use crate::workspace::WorkspaceError;

pub use dataset::{
    load_dataset, post_checkup, process_dataset, read_split, write_dataset, AlignmentCheck, AlignmentReport,
    DatasetCandidate, DatasetManifest, ProcessReport, Requirements, SplitInfo, Table, PROCESS_TEMPLATE_ID,
};
pub use hub::{
    rank_candidates, retrieve_dataset, retrieve_model, DatasetEntry, DatasetHub, HttpDatasetHub, HttpModelHub,
    ModelCandidate, ModelHub, StubDatasetHub, StubModelHub,
};
pub use train::{
    evaluate_predictions, execute_on_test, fit_linear, metric_value, train_model, Hyperparameters, LinearModel,
    Metric, PredictionRecord, TrainReport, BUILTIN_LINEAR_TRAINER,
};

#[derive(Debug, Error)]
pub enum ToolkitError {
    #[error("hub unavailable: {0}")]
    HubUnavailable(String),
    #[error("no match found for: {0}")]
    NoMatch(String),
    #[error("could not write dataset: {0}")]
    WriteError(String),
    #[error("{loads} load_dirs but {saves} save_dirs; the counts must match")]
    CountMismatch { loads: usize, saves: usize },
    #[error("dataset transformation failed: {0}")]
    TransformFailed(String),
    #[error("training failed: {0}")]
    TrainFailed(String),
    #[error("task package declares no {0} entrypoint")]
    MissingEntrypoint(String),
    #[error("no trained model found at {0}")]
    ArtifactMissing(String),
    #[error("model execution failed: {0}")]
    ExecFailed(String),
    #[error("{predictions} predictions but {references} references")]
    RowMismatch { predictions: usize, references: usize },
    #[error("unknown metric {0:?}; supported: accuracy, mse, rmse, pearson")]
    UnknownMetric(String),
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid task package: {0}")]
    Package(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Contents of a package's `task.meta` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub metric: String,
    pub direction: Direction,
    /// Command run on the pristine prototype to get the baseline metric.
    pub baseline_command: String,
    /// Command run on the final workspace; defaults to the baseline command.
    #[serde(default)]
    pub eval_command: Option<String>,
    #[serde(default)]
    pub train_entrypoint: Option<String>,
    #[serde(default)]
    pub predict_entrypoint: Option<String>,
    #[serde(default)]
    pub model_hub: Option<String>,
    #[serde(default)]
    pub dataset_hub: Option<String>,
}

impl TaskMeta {
    pub fn eval_command(&self) -> &str {
        self.eval_command.as_deref().unwrap_or(&self.baseline_command)
    }
}

/// A task directory with `task.meta`, `prototype/` and optional `fixtures/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPackage {
    pub root: PathBuf,
    pub meta: TaskMeta,
}

impl TaskPackage {
    pub fn load(root: &Path) -> Result<Self, ToolkitError> {
        let meta_path = root.join("task.meta");
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| ToolkitError::Package(format!("{}: {e}", meta_path.display())))?;
        let meta: TaskMeta =
            toml::from_str(&text).map_err(|e| ToolkitError::Package(format!("{}: {e}", meta_path.display())))?;
        if !root.join("prototype").is_dir() {
            return Err(ToolkitError::Package(format!("{} has no prototype/ directory", root.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            meta,
        })
    }

    pub fn prototype_dir(&self) -> PathBuf {
        self.root.join("prototype")
    }

    pub fn fixture(&self, name: &str) -> PathBuf {
        self.root.join("fixtures").join(name)
    }

    pub fn model_hub(&self) -> Option<StubModelHub> {
        let rel = self.meta.model_hub.as_ref()?;
        StubModelHub::from_file(&self.root.join(rel)).ok()
    }

    pub fn dataset_hub(&self) -> Option<StubDatasetHub> {
        let rel = self.meta.dataset_hub.as_ref()?;
        StubDatasetHub::open(&self.root.join(rel)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn package_requires_meta_and_prototype() {
        let dir = tempfile::tempdir().unwrap();
        assert!(TaskPackage::load(dir.path()).is_err());
        std::fs::write(
            dir.path().join("task.meta"),
            "name = \"t\"\nmetric = \"mse\"\ndirection = \"lower_better\"\nbaseline_command = \"train.py\"\n",
        )
        .unwrap();
        assert!(TaskPackage::load(dir.path()).is_err());
        std::fs::create_dir(dir.path().join("prototype")).unwrap();
        let pkg = TaskPackage::load(dir.path()).unwrap();
        assert_eq!(pkg.meta.direction, Direction::LowerBetter);
        assert_eq!(pkg.meta.eval_command(), "train.py");
        assert!(pkg.meta.train_entrypoint.is_none());
    }
}
