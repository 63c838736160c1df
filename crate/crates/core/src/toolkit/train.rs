use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::{read_split, Table, INPUT_COLUMN, OUTPUT_COLUMN};
use super::{TaskPackage, ToolkitError};
use crate::workspace::Workspace;

/// Train entrypoint name for the built-in gradient-descent linear trainer.
pub const BUILTIN_LINEAR_TRAINER: &str = "builtin:linear-gd";
const MODEL_FILE: &str = "trained_model/model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Mse,
    Rmse,
    Pearson,
}

impl Metric {
    pub fn parse(name: &str) -> Result<Self, ToolkitError> {
        let key: String = name
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == '-' || c == '_' { ' ' } else { c })
            .collect();
        match key.split_whitespace().collect::<Vec<_>>().join(" ").as_str() {
            "accuracy" | "acc" => Ok(Self::Accuracy),
            "mse" | "mean squared error" => Ok(Self::Mse),
            "rmse" | "root mean squared error" => Ok(Self::Rmse),
            "pearson" | "pearson correlation" | "pearsonr" | "pearson r" => Ok(Self::Pearson),
            _ => Err(ToolkitError::UnknownMetric(name.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Mse => "mse",
            Self::Rmse => "rmse",
            Self::Pearson => "pearson",
        }
    }

    pub fn is_numeric(self) -> bool {
        self != Self::Accuracy
    }
}

fn numbers(values: &[String], what: &str) -> Result<Vec<f64>, ToolkitError> {
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| ToolkitError::MetricUndefined(format!("{what} value {v:?} is not numeric")))
        })
        .collect()
}

fn same_label(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    a == b || matches!((a.parse::<f64>(), b.parse::<f64>()), (Ok(x), Ok(y)) if x == y)
}

/// Scores `predictions` against `references`, row by row.
pub fn metric_value(metric: Metric, predictions: &[String], references: &[String]) -> Result<f64, ToolkitError> {
    if predictions.len() != references.len() {
        return Err(ToolkitError::RowMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ToolkitError::MetricUndefined("no rows to score".into()));
    }
    let n = predictions.len() as f64;
    if metric == Metric::Accuracy {
        let hits = predictions.iter().zip(references).filter(|(p, r)| same_label(p, r)).count();
        return Ok(hits as f64 / n);
    }
    let p = numbers(predictions, "prediction")?;
    let r = numbers(references, "reference")?;
    let mse = p.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    match metric {
        Metric::Mse => Ok(mse),
        Metric::Rmse => Ok(mse.sqrt()),
        _ => {
            let (mp, mr) = (p.iter().sum::<f64>() / n, r.iter().sum::<f64>() / n);
            let cov: f64 = p.iter().zip(&r).map(|(a, b)| (a - mp) * (b - mr)).sum();
            let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum();
            let vr: f64 = r.iter().map(|b| (b - mr).powi(2)).sum();
            if vp == 0.0 || vr == 0.0 {
                return Err(ToolkitError::MetricUndefined("Pearson correlation of a constant series".into()));
            }
            Ok((cov / (vp.sqrt() * vr.sqrt())).clamp(-1.0, 1.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub epochs: u64,
    pub batch_size: u64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub learning_rate: f64,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), ToolkitError> {
        let problem = if self.epochs == 0 {
            Some("epochs must be positive")
        } else if self.batch_size == 0 {
            Some("batch_size must be positive")
        } else if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            Some("learning_rate must be a positive number")
        } else if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            Some("weight_decay must be a non-negative number")
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(ToolkitError::TrainFailed(p.into())))
    }

    /// Command-line flags named after the Train Model input fields.
    pub fn flags(&self) -> Vec<String> {
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
        ]
        .into_iter()
        .flat_map(|(k, v)| [format!("--{k}"), v])
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weight: f64,
    pub bias: f64,
}

impl LinearModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.weight * x + self.bias
    }

    pub fn mse(&self, xs: &[f64], ys: &[f64]) -> f64 {
        xs.iter().zip(ys).map(|(x, y)| (self.predict(*x) - y).powi(2)).sum::<f64>() / xs.len().max(1) as f64
    }
}

/// Mini-batch gradient descent on squared error, in data order, with a
/// linear learning-rate warmup and L2 decay on the weight.
pub fn fit_linear(xs: &[f64], ys: &[f64], hp: &Hyperparameters) -> Result<LinearModel, ToolkitError> {
    hp.validate()?;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(ToolkitError::TrainFailed(format!("need matching non-empty data, got {} inputs and {} targets", xs.len(), ys.len())));
    }
    let mut model = LinearModel { weight: 0.0, bias: 0.0 };
    let batch = hp.batch_size as usize;
    let mut step: u64 = 0;
    for _ in 0..hp.epochs {
        for (bx, by) in xs.chunks(batch).zip(ys.chunks(batch)) {
            step += 1;
            let scale = if hp.warmup_steps > 0 { (step as f64 / hp.warmup_steps as f64).min(1.0) } else { 1.0 };
            let n = bx.len() as f64;
            let (mut gw, mut gb) = (0.0, 0.0);
            for (x, y) in bx.iter().zip(by) {
                let err = model.predict(*x) - y;
                gw += 2.0 * err * x / n;
                gb += 2.0 * err / n;
            }
            gw += hp.weight_decay * model.weight;
            model.weight -= hp.learning_rate * scale * gw;
            model.bias -= hp.learning_rate * scale * gb;
        }
        if !(model.weight.is_finite() && model.bias.is_finite()) {
            return Err(ToolkitError::TrainFailed("training diverged; lower the learning rate".into()));
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub result_dir: String,
    pub metrics: BTreeMap<String, f64>,
}

impl TrainReport {
    pub fn render(&self) -> String {
        let metrics: Vec<String> = self.metrics.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        format!(
            "Model trained; artifact saved to {}/trained_model.\n{}",
            self.result_dir.trim_end_matches('/'),
            metrics.join("\n")
        )
    }
}

fn numeric_column(table: &Table, column: &str, dir: &str) -> Result<Vec<f64>, String> {
    let values = table.column(column).ok_or_else(|| format!("{dir} has no {column} column"))?;
    values
        .iter()
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{dir}: {column} value {v:?} is not numeric")))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, body).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_metrics(path: &Path) -> BTreeMap<String, f64> {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<BTreeMap<String, Value>>(&t).ok())
        .map(|m| m.into_iter().filter_map(|(k, v)| v.as_f64().map(|f| (k, f))).collect())
        .unwrap_or_default()
}

/// Runs the package's train entrypoint on `load_dirs`.
pub fn train_model(
    package: &TaskPackage,
    model_name: &str,
    hp: &Hyperparameters,
    load_dirs: &[String],
    result_dir: &str,
    ws: &Workspace,
) -> Result<TrainReport, ToolkitError> {
    hp.validate()?;
    let entry = package
        .meta
        .train_entrypoint
        .as_deref()
        .ok_or_else(|| ToolkitError::MissingEntrypoint("train".into()))?;
    let result_abs = ws.resolve(result_dir)?;
    if entry == BUILTIN_LINEAR_TRAINER {
        if load_dirs.is_empty() {
            return Err(ToolkitError::TrainFailed("no training data directories given".into()));
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for dir in load_dirs {
            let table = read_split(&ws.resolve(dir)?, "train").map_err(|e| ToolkitError::TrainFailed(e.to_string()))?;
            xs.extend(numeric_column(&table, INPUT_COLUMN, dir).map_err(ToolkitError::TrainFailed)?);
            ys.extend(numeric_column(&table, OUTPUT_COLUMN, dir).map_err(ToolkitError::TrainFailed)?);
        }
        let model = fit_linear(&xs, &ys, hp)?;
        let mut metrics = BTreeMap::new();
        metrics.insert("train_mse".to_string(), model.mse(&xs, &ys));
        metrics.insert("epochs".to_string(), hp.epochs as f64);
        let artifact = serde_json::json!({"kind": "linear", "model_name": model_name, "weight": model.weight, "bias": model.bias});
        write_json(&result_abs.join(MODEL_FILE), &artifact).map_err(ToolkitError::TrainFailed)?;
        write_json(&result_abs.join("metrics.json"), &metrics).map_err(ToolkitError::TrainFailed)?;
        return Ok(TrainReport {
            result_dir: result_dir.to_string(),
            metrics,
        });
    }
    let mut args = vec![
        "--model_name".to_string(),
        model_name.to_string(),
        "--load_dirs".to_string(),
        load_dirs.join(":"),
        "--result_dir".to_string(),
        result_dir.to_string(),
    ];
    args.extend(hp.flags());
    let result = ws.execute_with_args(entry, &args).map_err(|e| ToolkitError::TrainFailed(e.to_string()))?;
    if !result.success() {
        return Err(ToolkitError::TrainFailed(result.render()));
    }
    if !result_abs.join("trained_model").exists() {
        return Err(ToolkitError::TrainFailed(format!("{entry} wrote no {result_dir}/trained_model")));
    }
    Ok(TrainReport {
        result_dir: result_dir.to_string(),
        metrics: read_metrics(&result_abs.join("metrics.json")),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dataset: String,
    pub index: usize,
    pub input: String,
    pub prediction: Value,
}

impl PredictionRecord {
    fn prediction_text(&self) -> String {
        match &self.prediction {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, ToolkitError> {
    let text = std::fs::read_to_string(path).map_err(|e| ToolkitError::Dataset(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ToolkitError::Dataset(format!("{}: {e}", path.display())))
}

/// Predicts every test row of each dataset, in order, and saves the records.
#[allow(clippy::too_many_arguments)]
pub fn execute_on_test(
    package: &TaskPackage,
    result_dir: &str,
    load_dirs: &[String],
    save_path: &str,
    batch_size: u64,
    input_column: &str,
    ws: &Workspace,
) -> Result<Vec<PredictionRecord>, ToolkitError> {
    let result_abs = ws.resolve(result_dir)?;
    if !result_abs.join("trained_model").exists() {
        return Err(ToolkitError::ArtifactMissing(format!("{}/trained_model", result_dir.trim_end_matches('/'))));
    }
    if batch_size == 0 {
        return Err(ToolkitError::ExecFailed("batch_size must be positive".into()));
    }
    let save_abs = ws.resolve(save_path)?;
    if let Some(entry) = package.meta.predict_entrypoint.as_deref() {
        let args = [
            ("--result_dir", result_dir.to_string()),
            ("--load_dirs", load_dirs.join(":")),
            ("--save_path", save_path.to_string()),
            ("--batch_size", batch_size.to_string()),
            ("--input_column", input_column.to_string()),
        ]
        .into_iter()
        .flat_map(|(k, v)| [k.to_string(), v])
        .collect::<Vec<_>>();
        let result = ws.execute_with_args(entry, &args).map_err(|e| ToolkitError::ExecFailed(e.to_string()))?;
        if !result.success() {
            return Err(ToolkitError::ExecFailed(result.render()));
        }
        return read_predictions(&save_abs).map_err(|e| ToolkitError::ExecFailed(e.to_string()));
    }
    let model_text = std::fs::read_to_string(result_abs.join(MODEL_FILE))
        .map_err(|_| ToolkitError::ArtifactMissing(format!("{}/{MODEL_FILE}", result_dir.trim_end_matches('/'))))?;
    let model: LinearModel =
        serde_json::from_str(&model_text).map_err(|e| ToolkitError::ExecFailed(format!("unreadable model: {e}")))?;
    let mut records = Vec::new();
    for dir in load_dirs {
        let table = read_split(&ws.resolve(dir)?, "test").map_err(|e| ToolkitError::ExecFailed(e.to_string()))?;
        let inputs = table
            .column(input_column)
            .ok_or_else(|| ToolkitError::ExecFailed(format!("{dir} has no {input_column} column")))?;
        for (index, raw) in inputs.iter().enumerate() {
            let x: f64 = raw
                .trim()
                .parse()
                .map_err(|_| ToolkitError::ExecFailed(format!("{dir} row {index}: input {raw:?} is not numeric")))?;
            records.push(PredictionRecord {
                dataset: dir.clone(),
                index,
                input: raw.to_string(),
                prediction: serde_json::json!(model.predict(x)),
            });
        }
    }
    write_json(&save_abs, &records).map_err(ToolkitError::ExecFailed)?;
    Ok(records)
}

/// Scores saved predictions against the test splits' `output_column`.
pub fn evaluate_predictions(
    metric: &str,
    load_dirs: &[String],
    save_path: &str,
    output_column: &str,
    ws: &Workspace,
) -> Result<BTreeMap<String, f64>, ToolkitError> {
    let metric = Metric::parse(metric)?;
    let predictions: Vec<String> = read_predictions(&ws.resolve(save_path)?)?.iter().map(PredictionRecord::prediction_text).collect();
    let mut references = Vec::new();
    for dir in load_dirs {
        let table = read_split(&ws.resolve(dir)?, "test")?;
        let column = table
            .column(output_column)
            .ok_or_else(|| ToolkitError::Dataset(format!("{dir} has no {output_column} column")))?;
        references.extend(column.into_iter().map(str::to_string));
    }
    let value = metric_value(metric, &predictions, &references)?;
    Ok(BTreeMap::from([(metric.name().to_string(), value)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::Direction;
    use crate::toolkit::{write_dataset, TaskMeta};
    use crate::workspace::ExecutionPolicy;
    use proptest::prelude::*;

    fn s(values: &[f64]) -> Vec<String> {
        values.iter().map(|v| v.to_string()).collect()
    }

    fn hp(epochs: u64, batch_size: u64, learning_rate: f64) -> Hyperparameters {
        Hyperparameters {
            epochs,
            batch_size,
            warmup_steps: 0,
            weight_decay: 0.0,
            learning_rate,
        }
    }

    /// Closed-form simple regression, computed without the trainer.
    fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        (slope, (sy - slope * sx) / n)
    }

    fn noisy_line() -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        // deterministic zero-mean-ish wiggle standing in for noise
        let ys = xs.iter().enumerate().map(|(i, x)| 2.0 * x + 1.0 + 0.05 * ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        (xs, ys)
    }

    #[test]
    fn metric_oracles() {
        let mse = metric_value(Metric::Mse, &s(&[1.0, 2.0, 4.0]), &s(&[1.0, 2.0, 3.0])).unwrap();
        assert!((mse - 1.0 / 3.0).abs() < 1e-12);
        let rmse = metric_value(Metric::Rmse, &s(&[1.0, 2.0, 4.0]), &s(&[1.0, 2.0, 3.0])).unwrap();
        assert!((rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let labels: Vec<String> = ["pos", "neg", "pos"].iter().map(|x| x.to_string()).collect();
        assert_eq!(metric_value(Metric::Accuracy, &labels, &labels).unwrap(), 1.0);
        let err = metric_value(Metric::Mse, &s(&[1.0; 5]), &s(&[1.0; 6])).unwrap_err();
        assert!(matches!(err, ToolkitError::RowMismatch { predictions: 5, references: 6 }));
        assert!(matches!(Metric::parse("bleu"), Err(ToolkitError::UnknownMetric(_))));
        assert_eq!(Metric::parse("Mean-Squared Error").unwrap(), Metric::Mse);
    }

    #[test]
    fn slope_matches_least_squares_on_noisy_line() {
        let (xs, ys) = noisy_line();
        let (slope, intercept) = least_squares(&xs, &ys);
        assert!((slope - 2.0).abs() < 0.05);
        let model = fit_linear(&xs, &ys, &hp(200, 8, 0.1)).unwrap();
        assert!((model.weight - slope).abs() <= 0.05, "{} vs {slope}", model.weight);
        assert!((model.bias - intercept).abs() <= 0.05);
    }

    #[test]
    fn degenerate_hyperparameters() {
        let err = fit_linear(&[1.0], &[1.0], &hp(0, 1, 0.1)).unwrap_err();
        assert!(matches!(err, ToolkitError::TrainFailed(m) if m.contains("epochs")));
        assert!(fit_linear(&[1.0], &[1.0], &hp(1, 0, 0.1)).is_err());
        assert!(fit_linear(&[1.0], &[1.0], &hp(1, 1, -0.1)).is_err());
    }

    #[test]
    fn warmup_and_decay_are_applied() {
        let (xs, ys) = noisy_line();
        let plain = fit_linear(&xs, &ys, &hp(5, 40, 0.1)).unwrap();
        let warm = fit_linear(&xs, &ys, &Hyperparameters { warmup_steps: 5, ..hp(5, 40, 0.1) }).unwrap();
        assert!(warm.weight < plain.weight);
        let decayed = fit_linear(&xs, &ys, &Hyperparameters { weight_decay: 1.0, ..hp(200, 8, 0.1) }).unwrap();
        assert!(decayed.weight < 1.9);
    }

    fn package(dir: &Path, train: Option<&str>) -> TaskPackage {
        std::fs::create_dir_all(dir.join("prototype")).unwrap();
        TaskPackage {
            root: dir.to_path_buf(),
            meta: TaskMeta {
                name: "toy".into(),
                metric: "mse".into(),
                direction: Direction::LowerBetter,
                baseline_command: "train.py".into(),
                eval_command: None,
                train_entrypoint: train.map(str::to_string),
                predict_entrypoint: None,
                model_hub: None,
                dataset_hub: None,
            },
        }
    }

    fn line_table(xs: &[f64]) -> Table {
        Table::new(&["model_input", "model_output"], xs.iter().map(|x| vec![x.to_string(), (2.0 * x + 1.0).to_string()]).collect())
    }

    #[test]
    fn builtin_train_execute_evaluate() {
        let pkg_dir = tempfile::tempdir().unwrap();
        let pkg = package(pkg_dir.path(), Some(BUILTIN_LINEAR_TRAINER));
        let ws_dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(ws_dir.path(), ExecutionPolicy::default()).unwrap();
        let train_x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let test_x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        write_dataset(&ws.root().join("data/line"), "line", "", &[("train", line_table(&train_x)), ("test", line_table(&test_x))]).unwrap();
        let dirs = vec!["data/line".to_string()];

        let missing = execute_on_test(&pkg, "out", &dirs, "preds.json", 4, "model_input", &ws).unwrap_err();
        assert!(matches!(missing, ToolkitError::ArtifactMissing(_)));

        let report = train_model(&pkg, "linear", &hp(200, 8, 0.1), &dirs, "out", &ws).unwrap();
        assert!(report.metrics["train_mse"] < 1e-3);
        assert!(ws.exists("out/metrics.json"));

        let records = execute_on_test(&pkg, "out", &dirs, "preds.json", 4, "model_input", &ws).unwrap();
        assert_eq!(records.len(), 20);
        let scores = evaluate_predictions("mse", &dirs, "preds.json", "model_output", &ws).unwrap();
        assert!(scores["mse"] < 1e-3);
    }

    #[test]
    fn predictions_follow_stored_parameters() {
        let pkg_dir = tempfile::tempdir().unwrap();
        let pkg = package(pkg_dir.path(), Some(BUILTIN_LINEAR_TRAINER));
        let ws_dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(ws_dir.path(), ExecutionPolicy::default()).unwrap();
        write_dataset(&ws.root().join("d"), "d", "", &[("test", line_table(&[0.0, 1.0, 2.0]))]).unwrap();
        write_json(&ws.root().join("r/trained_model/model.json"), &LinearModel { weight: 1.5, bias: -0.25 }).unwrap();
        let records = execute_on_test(&pkg, "r", &["d".into()], "p.json", 1, "model_input", &ws).unwrap();
        let preds: Vec<f64> = records.iter().map(|r| r.prediction.as_f64().unwrap()).collect();
        assert_eq!(preds, [-0.25, 1.25, 2.75]);
    }

    #[test]
    fn missing_entrypoint_and_script_failures() {
        let pkg_dir = tempfile::tempdir().unwrap();
        let ws_dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(ws_dir.path(), ExecutionPolicy::default()).unwrap();
        let err = train_model(&package(pkg_dir.path(), None), "m", &hp(1, 1, 0.1), &[], "out", &ws).unwrap_err();
        assert!(matches!(err, ToolkitError::MissingEntrypoint(_)));
        std::fs::write(ws.root().join("fit.py"), "import sys\nprint(sys.argv[1:])\nsys.exit('bad data')\n").unwrap();
        let err = train_model(&package(pkg_dir.path(), Some("fit.py")), "m", &hp(1, 1, 0.1), &["d".into()], "out", &ws).unwrap_err();
        assert!(matches!(&err, ToolkitError::TrainFailed(m) if m.contains("bad data") && m.contains("--learning_rate")), "{err}");
    }

    proptest! {
        #[test]
        fn accuracy_of_self_is_one(values in proptest::collection::vec("[a-z0-9]{1,5}", 1..20)) {
            prop_assert_eq!(metric_value(Metric::Accuracy, &values, &values).unwrap(), 1.0);
        }

        #[test]
        fn pearson_of_self_is_one(values in proptest::collection::vec(-1e3f64..1e3, 2..20)) {
            let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            let text = s(&values);
            let r = metric_value(Metric::Pearson, &text, &text).unwrap();
            prop_assert!((r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_convergence_is_monotone() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let (slope, intercept) = least_squares(&xs, &ys);
        let distance = |epochs| {
            let m = fit_linear(&xs, &ys, &hp(epochs, 30, 0.5)).unwrap();
            ((m.weight - slope).powi(2) + (m.bias - intercept).powi(2)).sqrt()
        };
        let d: Vec<f64> = [10, 50, 200].into_iter().map(distance).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        assert!(d[2] < 0.05);
    }
}
