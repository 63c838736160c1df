use std::collections::BTreeMap;

use super::{aggregate_table, csv_field, EvalError};

const AVERAGE_LABEL: &str = "Average";

/// A results table kept as recorded data: one labelled row per task (or
/// criterion) and one numeric column per system. A row labelled `Average`
/// is kept aside as the printed average.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTable {
    pub label_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
    pub printed_average: Option<Vec<Option<f64>>>,
}

impl RecordedTable {
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| EvalError::Table(e.to_string()))?.clone();
        if headers.len() < 2 {
            return Err(EvalError::Table("need a label column and at least one value column".into()));
        }
        let mut table = Self {
            label_header: headers[0].to_string(),
            columns: headers.iter().skip(1).map(str::to_string).collect(),
            rows: Vec::new(),
            printed_average: None,
        };
        for record in reader.records() {
            let record = record.map_err(|e| EvalError::Table(e.to_string()))?;
            let label = record.get(0).unwrap_or("").to_string();
            let values = record
                .iter()
                .skip(1)
                .map(|v| {
                    if v.is_empty() {
                        Ok(None)
                    } else {
                        v.parse::<f64>().map(Some).map_err(|_| EvalError::Table(format!("row {label}: {v:?} is not a number")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            if label.eq_ignore_ascii_case(AVERAGE_LABEL) {
                table.printed_average = Some(values);
            } else {
                table.rows.push((label, values));
            }
        }
        if table.rows.is_empty() {
            return Err(EvalError::EmptyMap);
        }
        Ok(table)
    }

    fn column_index(&self, column: &str) -> Result<usize, EvalError> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| EvalError::Table(format!("no column named {column:?}")))
    }

    /// Row label to value for one column, skipping empty cells.
    pub fn column(&self, column: &str) -> Result<BTreeMap<String, f64>, EvalError> {
        let idx = self.column_index(column)?;
        Ok(self
            .rows
            .iter()
            .filter_map(|(label, values)| values.get(idx).copied().flatten().map(|v| (label.clone(), v)))
            .collect())
    }

    /// Values of the named rows in one column.
    pub fn select(&self, labels: &[&str], column: &str) -> Result<BTreeMap<String, f64>, EvalError> {
        let all = self.column(column)?;
        labels
            .iter()
            .map(|l| {
                all.get(*l)
                    .map(|v| (l.to_string(), *v))
                    .ok_or_else(|| EvalError::Table(format!("no value for row {l:?} in column {column:?}")))
            })
            .collect()
    }

    pub fn averages(&self) -> Result<Vec<(String, f64)>, EvalError> {
        self.columns
            .iter()
            .map(|c| Ok((c.clone(), aggregate_table(&self.column(c)?)?)))
            .collect()
    }

    pub fn printed_average(&self, column: &str) -> Option<f64> {
        let idx = self.column_index(column).ok()?;
        self.printed_average.as_ref()?.get(idx).copied().flatten()
    }

    /// The table as CSV with a recomputed `Average` row.
    pub fn render_csv(&self) -> Result<String, EvalError> {
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = std::iter::once(&self.label_header)
            .chain(&self.columns)
            .map(|h| csv_field(h))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for (label, values) in &self.rows {
            let cells: Vec<String> = std::iter::once(csv_field(label)).chain(values.iter().map(fmt)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let averages: Vec<String> = self.averages()?.into_iter().map(|(_, v)| format!("{v:.2}")).collect();
        out.push_str(&format!("{AVERAGE_LABEL},{}\n", averages.join(",")));
        Ok(out)
    }
}
