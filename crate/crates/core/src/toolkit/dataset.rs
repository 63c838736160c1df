use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::Metric;
use super::ToolkitError;
use crate::idea::ExperimentPlan;
use crate::llm::{Gateway, GENERATION_TEMPERATURE};
use crate::text::{strip_code_fence, tokens};
use crate::workspace::{Workspace, WorkspaceError};

pub const PROCESS_TEMPLATE_ID: &str = "process-dataset/v1";
pub(crate) const INPUT_COLUMN: &str = "model_input";
pub(crate) const OUTPUT_COLUMN: &str = "model_output";
const SCRIPT_DIR: &str = ".mlr";
const SAMPLE_ROWS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub row_count: usize,
}

impl SplitInfo {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

/// `manifest.json` of an on-disk dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub columns: Vec<String>,
    pub splits: Vec<SplitInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCandidate {
    pub name: String,
    pub description: String,
    pub splits: Vec<SplitInfo>,
    pub columns: Vec<String>,
    pub save_dir: Option<PathBuf>,
}

impl DatasetCandidate {
    pub fn split(&self, name: &str) -> Option<&SplitInfo> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Rows of one split, all values kept as text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str], rows: Vec<Vec<String>>) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.get(idx).map(String::as_str).unwrap_or("")).collect())
    }

    pub fn read(path: &Path) -> Result<Self, ToolkitError> {
        let bad = |e: csv::Error| ToolkitError::Dataset(format!("{}: {e}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(bad)?;
        let columns = reader.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        Ok(Self { columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), ToolkitError> {
        let bad = |e: csv::Error| ToolkitError::WriteError(format!("{}: {e}", path.display()));
        let mut writer = csv::Writer::from_path(path).map_err(bad)?;
        writer.write_record(&self.columns).map_err(bad)?;
        for row in &self.rows {
            writer.write_record(row).map_err(bad)?;
        }
        writer.flush().map_err(|e| ToolkitError::WriteError(format!("{}: {e}", path.display())))
    }
}

pub fn read_split(dir: &Path, split: &str) -> Result<Table, ToolkitError> {
    Table::read(&dir.join(format!("{split}.csv")))
}

/// Reads a dataset directory and checks it against its manifest.
pub fn load_dataset(dir: &Path) -> Result<DatasetCandidate, ToolkitError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| ToolkitError::Dataset(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| ToolkitError::Dataset(format!("{}: {e}", manifest_path.display())))?;
    if manifest.splits.is_empty() {
        return Err(ToolkitError::Dataset(format!("{} declares no splits", dir.display())));
    }
    for split in &manifest.splits {
        let table = read_split(dir, &split.name)?;
        if let Some(missing) = manifest.columns.iter().find(|c| !table.columns.contains(c)) {
            return Err(ToolkitError::Dataset(format!("split {} lacks column {missing}", split.name)));
        }
        if table.rows.len() != split.row_count {
            return Err(ToolkitError::Dataset(format!(
                "split {} has {} rows but the manifest says {}",
                split.name,
                table.rows.len(),
                split.row_count
            )));
        }
    }
    Ok(DatasetCandidate {
        name: manifest.name,
        description: manifest.description,
        splits: manifest.splits,
        columns: manifest.columns,
        save_dir: Some(dir.to_path_buf()),
    })
}

/// Writes split files and a manifest; columns come from the first split.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    description: &str,
    splits: &[(&str, Table)],
) -> Result<DatasetCandidate, ToolkitError> {
    std::fs::create_dir_all(dir).map_err(|e| ToolkitError::WriteError(format!("{}: {e}", dir.display())))?;
    for (split, table) in splits {
        table.write(&dir.join(format!("{split}.csv")))?;
    }
    write_manifest(dir, name, description, splits.iter().map(|(n, t)| (n.to_string(), t)).collect())?;
    load_dataset(dir)
}

fn write_manifest(dir: &Path, name: &str, description: &str, splits: Vec<(String, &Table)>) -> Result<(), ToolkitError> {
    let manifest = DatasetManifest {
        name: name.to_string(),
        description: description.to_string(),
        columns: splits.first().map(|(_, t)| t.columns.clone()).unwrap_or_default(),
        splits: splits
            .iter()
            .map(|(n, t)| SplitInfo {
                name: n.clone(),
                row_count: t.rows.len(),
            })
            .collect(),
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join("manifest.json"), body).map_err(|e| ToolkitError::WriteError(format!("{}: {e}", dir.display())))
}

/// What an experiment plan expects from its dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Requirements {
    pub columns: Vec<String>,
    pub splits: Vec<String>,
    pub metrics: Vec<Metric>,
}

const SPLIT_WORDS: &[(&str, &str)] = &[
    ("train", "train"),
    ("training", "train"),
    ("test", "test"),
    ("testing", "test"),
    ("validation", "validation"),
    ("dev", "validation"),
];

impl Requirements {
    /// Reads split names, metric names and backticked column names from the
    /// plan text.
    pub fn from_plan(plan: &ExperimentPlan) -> Self {
        Self::from_text(&plan.raw)
    }

    pub fn from_text(text: &str) -> Self {
        let words = tokens(text);
        let mut splits = Vec::new();
        for (word, split) in SPLIT_WORDS {
            if words.iter().any(|w| w == word) && !splits.iter().any(|s| s == split) {
                splits.push(split.to_string());
            }
        }
        let has_seq = |seq: &[&str]| words.windows(seq.len()).any(|w| w.iter().zip(seq).all(|(a, b)| a == b));
        let plain_mse = words
            .windows(3)
            .enumerate()
            .any(|(i, w)| w == ["mean", "squared", "error"] && (i == 0 || words[i - 1] != "root"));
        let mut metrics = Vec::new();
        if words.iter().any(|w| w == "accuracy") {
            metrics.push(Metric::Accuracy);
        }
        if plain_mse || words.iter().any(|w| w == "mse") {
            metrics.push(Metric::Mse);
        }
        if has_seq(&["root", "mean", "squared", "error"]) || words.iter().any(|w| w == "rmse") {
            metrics.push(Metric::Rmse);
        }
        if words.iter().any(|w| w == "pearson") {
            metrics.push(Metric::Pearson);
        }
        let backticked = regex::Regex::new(r"`([A-Za-z_][A-Za-z0-9_]*)`").expect("valid regex");
        let mut columns: Vec<String> = Vec::new();
        for cap in backticked.captures_iter(text) {
            if !columns.iter().any(|c| c == &cap[1]) {
                columns.push(cap[1].to_string());
            }
        }
        Self { columns, splits, metrics }
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty() && self.splits.is_empty() && self.metrics.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub passed: bool,
    pub checks: Vec<AlignmentCheck>,
}

impl AlignmentReport {
    pub fn render(&self) -> String {
        let mut out = format!("Post-checkup {}", if self.passed { "passed" } else { "failed" });
        for c in &self.checks {
            out.push_str(&format!("\n- [{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail));
        }
        out
    }
}

fn target_column(dataset: &DatasetCandidate) -> Option<&str> {
    if dataset.columns.iter().any(|c| c == OUTPUT_COLUMN) {
        Some(OUTPUT_COLUMN)
    } else {
        dataset.columns.last().map(String::as_str)
    }
}

fn metric_check(dataset: &DatasetCandidate, metric: Metric) -> AlignmentCheck {
    let name = format!("metric {}", metric.name());
    let fail = |detail: String| AlignmentCheck {
        name: name.clone(),
        passed: false,
        detail,
    };
    let Some(column) = target_column(dataset) else {
        return fail("dataset has no columns".into());
    };
    let Some(dir) = &dataset.save_dir else {
        return fail("dataset is not materialized".into());
    };
    if metric.is_numeric() {
        for split in &dataset.splits {
            let table = match read_split(dir, &split.name) {
                Ok(t) => t,
                Err(e) => return fail(e.to_string()),
            };
            let values = table.column(column).unwrap_or_default();
            if let Some(bad) = values.iter().find(|v| v.trim().parse::<f64>().is_err()) {
                return fail(format!("column {column} in split {} holds non-numeric value {bad:?}", split.name));
            }
        }
    }
    AlignmentCheck {
        name,
        passed: true,
        detail: format!("computable on column {column}"),
    }
}

/// Checks a materialized dataset against the plan's requirements.
pub fn post_checkup(dataset: &DatasetCandidate, requirements: &Requirements) -> AlignmentReport {
    let mut checks = Vec::new();
    for column in &requirements.columns {
        let passed = dataset.columns.contains(column);
        checks.push(AlignmentCheck {
            name: format!("column {column}"),
            passed,
            detail: if passed { "present".into() } else { format!("column {column} is missing") },
        });
    }
    for split in &requirements.splits {
        match dataset.split(split) {
            Some(info) => {
                checks.push(AlignmentCheck {
                    name: format!("split {split}"),
                    passed: true,
                    detail: "present".into(),
                });
                checks.push(AlignmentCheck {
                    name: format!("rows in {split}"),
                    passed: info.row_count > 0,
                    detail: format!("{} rows", info.row_count),
                });
            }
            None => checks.push(AlignmentCheck {
                name: format!("split {split}"),
                passed: false,
                detail: format!("split {split} is missing"),
            }),
        }
    }
    for metric in &requirements.metrics {
        checks.push(metric_check(dataset, *metric));
    }
    AlignmentReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub outputs: Vec<DatasetCandidate>,
}

impl ProcessReport {
    pub fn render(&self) -> String {
        let parts: Vec<String> = self
            .outputs
            .iter()
            .map(|d| {
                let splits: Vec<String> = d.splits.iter().map(|s| format!("{} ({} rows)", s.name, s.row_count)).collect();
                let dir = d.save_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
                format!("{dir}: {}", splits.join(", "))
            })
            .collect();
        format!("Processed datasets written to {}", parts.join("; "))
    }
}

fn process_prompt(instruction: &str, dataset: &DatasetCandidate, sample: &Table) -> String {
    let rows: Vec<String> = sample.rows.iter().take(SAMPLE_ROWS).map(|r| r.join(" | ")).collect();
    format!(
        "Write a standalone Python 3 script that transforms one CSV file.\n\
         It is called as: python3 script.py INPUT_CSV OUTPUT_CSV\n\
         Use only the standard library (csv, sys, json, re, math).\n\
         The output CSV must have a `{INPUT_COLUMN}` column and a `{OUTPUT_COLUMN}` column, one output row per input row.\n\n\
         Transformation: {instruction}\n\n\
         Input columns: {}\nExample rows:\n{}\n\n\
         Reply with the script only.\n",
        dataset.columns.join(", "),
        rows.join("\n"),
    )
}

fn transform_failed(e: WorkspaceError) -> ToolkitError {
    ToolkitError::TransformFailed(e.to_string())
}

/// Generates a transformation script per dataset and runs it on every split.
pub fn process_dataset(
    instruction: &str,
    load_dirs: &[String],
    save_dirs: &[String],
    llm: &Gateway,
    ws: &Workspace,
) -> Result<ProcessReport, ToolkitError> {
    if load_dirs.len() != save_dirs.len() {
        return Err(ToolkitError::CountMismatch {
            loads: load_dirs.len(),
            saves: save_dirs.len(),
        });
    }
    if load_dirs.is_empty() {
        return Err(ToolkitError::Dataset("no dataset directories given".into()));
    }
    let mut outputs = Vec::new();
    for (i, (load, save)) in load_dirs.iter().zip(save_dirs).enumerate() {
        let source = load_dataset(&ws.resolve(load)?)?;
        let first = read_split(source.save_dir.as_deref().expect("loaded"), &source.splits[0].name)?;
        let reply = llm.ask(&process_prompt(instruction, &source, &first), PROCESS_TEMPLATE_ID, GENERATION_TEMPERATURE)?;
        let script_rel = format!("{SCRIPT_DIR}/process_{i}.py");
        let script_abs = ws.resolve(&script_rel)?;
        let save_abs = ws.resolve(save)?;
        for dir in [script_abs.parent().expect("has parent"), save_abs.as_path()] {
            std::fs::create_dir_all(dir).map_err(|e| ToolkitError::WriteError(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(&script_abs, strip_code_fence(&reply).trim_start())
            .map_err(|e| ToolkitError::WriteError(format!("{script_rel}: {e}")))?;
        let mut tables = Vec::new();
        for split in &source.splits {
            let input = format!("{}/{}", load.trim_end_matches('/'), split.file_name());
            let output = format!("{}/{}", save.trim_end_matches('/'), split.file_name());
            let result = ws.execute_with_args(&script_rel, &[input, output]).map_err(transform_failed)?;
            if !result.success() {
                return Err(ToolkitError::TransformFailed(result.render()));
            }
            let table = read_split(&save_abs, &split.name)
                .map_err(|e| ToolkitError::TransformFailed(format!("no readable output for split {}: {e}", split.name)))?;
            for needed in [INPUT_COLUMN, OUTPUT_COLUMN] {
                if !table.columns.iter().any(|c| c == needed) {
                    return Err(ToolkitError::TransformFailed(format!(
                        "output of split {} lacks the {needed} column",
                        split.name
                    )));
                }
            }
            tables.push((split.name.clone(), table));
        }
        write_manifest(&save_abs, &source.name, &format!("{} (processed)", source.description), tables.iter().map(|(n, t)| (n.clone(), t)).collect())?;
        outputs.push(load_dataset(&save_abs)?);
    }
    Ok(ProcessReport { outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{RetryPolicy, ScriptEntry, ScriptedProvider, ScriptedSession, DEFAULT_TOKEN_BUDGET};
    use crate::workspace::ExecutionPolicy;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn rows(n: usize, f: impl Fn(usize) -> Vec<String>) -> Vec<Vec<String>> {
        (0..n).map(f).collect()
    }

    fn text_table(n: usize) -> Table {
        Table::new(&["text", "label"], rows(n, |i| vec![format!("sample {i}"), (i % 2).to_string()]))
    }

    fn gateway(replies: &[&str]) -> Gateway {
        let session = ScriptedSession::new(replies.iter().map(|r| ScriptEntry::reply(*r)).collect());
        Gateway::with_limits(Arc::new(ScriptedProvider::new("s", session)), RetryPolicy::immediate(0), DEFAULT_TOKEN_BUDGET)
    }

    const IDENTITY: &str = "```python\nimport csv, sys\nwith open(sys.argv[1]) as f:\n    rows = list(csv.DictReader(f))\n\
        with open(sys.argv[2], 'w', newline='') as f:\n    w = csv.writer(f)\n    w.writerow(['model_input', 'model_output'])\n    for r in rows:\n\
        \x20       w.writerow([r['text'], r['label']])\n```";

    const UPPER: &str = "import csv, sys\nwith open(sys.argv[1]) as f:\n    rows = list(csv.DictReader(f))\n\
        with open(sys.argv[2], 'w', newline='') as f:\n    w = csv.writer(f)\n    w.writerow(['model_input', 'model_output'])\n    for r in rows:\n\
        \x20       w.writerow([r['text'].upper(), r['label']])\n";

    #[test]
    fn round_trip_keeps_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_dataset(dir.path(), "toy", "d", &[("train", text_table(80)), ("test", text_table(20))]).unwrap();
        let counts: Vec<_> = ds.splits.iter().map(|s| s.row_count).collect();
        assert_eq!(counts, [80, 20]);
        // independent count: csv lines minus header
        let lines = std::fs::read_to_string(dir.path().join("train.csv")).unwrap().lines().count();
        assert_eq!(lines - 1, 80);
        assert_eq!(read_split(dir.path(), "test").unwrap(), text_table(20));
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "toy", "d", &[("train", text_table(3))]).unwrap();
        text_table(4).write(&dir.path().join("train.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(ToolkitError::Dataset(_))));
    }

    #[test]
    fn post_checkup_cases() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_dataset(dir.path(), "toy", "d", &[("train", text_table(5))]).unwrap();
        let ok = post_checkup(&ds, &Requirements::from_text("Use the `text` and `label` columns of the training data."));
        assert!(ok.passed, "{}", ok.render());
        let missing = post_checkup(&ds, &Requirements::from_text("Report accuracy on the test split."));
        assert!(!missing.passed);
        let failing: Vec<_> = missing.checks.iter().filter(|c| !c.passed).collect();
        assert_eq!(failing.len(), 1);
        assert!(failing[0].name.contains("test"));
        let vacuous = post_checkup(&ds, &Requirements::default());
        assert!(vacuous.passed);
        assert!(vacuous.checks.is_empty());
    }

    #[test]
    fn numeric_metric_needs_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let table = Table::new(&["model_input", "model_output"], vec![vec!["a".into(), "yes".into()]]);
        let ds = write_dataset(dir.path(), "toy", "d", &[("test", table)]).unwrap();
        let report = post_checkup(&ds, &Requirements::from_text("score with mean squared error"));
        assert!(!report.passed);
        let report = post_checkup(&ds, &Requirements::from_text("score with accuracy"));
        assert!(report.passed);
    }

    #[test]
    fn requirement_extraction() {
        let r = Requirements::from_text("Train on the training split, tune on dev, report root mean squared error and Pearson on `score`.");
        assert_eq!(r.splits, ["train", "validation"]);
        assert_eq!(r.metrics, [Metric::Rmse, Metric::Pearson]);
        assert_eq!(r.columns, ["score"]);
    }

    fn workspace_with(n: usize) -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path(), ExecutionPolicy::default()).unwrap();
        write_dataset(&ws.root().join("data/raw"), "raw", "d", &[("train", text_table(n))]).unwrap();
        (dir, ws)
    }

    #[test]
    fn identity_transform_keeps_rows() {
        let (_d, ws) = workspace_with(10);
        let report = process_dataset("copy text and label", &["data/raw".into()], &["data/out".into()], &gateway(&[IDENTITY]), &ws).unwrap();
        assert_eq!(report.outputs[0].splits[0].row_count, 10);
        let table = read_split(&ws.root().join("data/out"), "train").unwrap();
        assert_eq!(table.columns, ["model_input", "model_output"]);
    }

    #[test]
    fn uppercase_transform_matches_hand_result() {
        let (_d, ws) = workspace_with(3);
        process_dataset("uppercase the input text", &["data/raw".into()], &["data/up".into()], &gateway(&[UPPER]), &ws).unwrap();
        let table = read_split(&ws.root().join("data/up"), "train").unwrap();
        assert_eq!(table.column("model_input").unwrap(), ["SAMPLE 0", "SAMPLE 1", "SAMPLE 2"]);
    }

    #[test]
    fn arity_and_failures() {
        let (_d, ws) = workspace_with(3);
        let err = process_dataset("x", &["a".into(), "b".into()], &["c".into()], &gateway(&[]), &ws).unwrap_err();
        assert!(matches!(err, ToolkitError::CountMismatch { loads: 2, saves: 1 }));
        let err = process_dataset("x", &["data/raw".into()], &["data/bad".into()], &gateway(&["import sys\nsys.exit('boom')\n"]), &ws)
            .unwrap_err();
        assert!(matches!(err, ToolkitError::TransformFailed(m) if m.contains("boom")));
    }

    proptest! {
        #[test]
        fn passed_is_conjunction(cols in proptest::collection::vec("[a-c]", 0..4), text in "[a-z `]{0,40}") {
            let dir = tempfile::tempdir().unwrap();
            let table = Table::new(&["a", "b"], vec![vec!["1".into(), "2".into()]]);
            let ds = write_dataset(dir.path(), "t", "", &[("train", table)]).unwrap();
            let mut req = Requirements::from_text(&text);
            req.columns.extend(cols);
            let report = post_checkup(&ds, &req);
            prop_assert_eq!(report.passed, report.checks.iter().all(|c| c.passed));
        }
    }
}
