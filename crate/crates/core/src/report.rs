//! Structured experiment results: a JSON summary plus a raw CSV table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Raw per-trial values for external plotting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of one experiment. `measured` and `bounds` hold one value per
/// grid point; `pass` holds one flag per checked criterion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub grid: Vec<f64>,
    pub measured: BTreeMap<String, Vec<f64>>,
    pub bounds: BTreeMap<String, Vec<f64>>,
    pub slopes: BTreeMap<String, f64>,
    pub pass: BTreeMap<String, bool>,
    #[serde(skip)]
    pub raw: RawTable,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: &impl Serialize) -> Self {
        Self {
            experiment: experiment.to_string(),
            config: serde_json::to_value(config).expect("configs serialize to JSON"),
            ..Self::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.pass.values().all(|&p| p)
    }

    /// Names of the criteria that failed.
    pub fn failures(&self) -> Vec<&str> {
        self.pass.iter().filter(|(_, &ok)| !ok).map(|(k, _)| k.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize to JSON")
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_slope(&lx, &ly)
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
