use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Metric;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatTrace {
    pub repeat: usize,
    /// `values[k][m]` for metric `m` at round `k`.
    pub values: Vec<Vec<f64>>,
    /// First round whose state or metrics left the finite range.
    pub diverged_at: Option<usize>,
    /// `f(x^K)`, absent for diverged runs.
    pub final_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterates: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub metrics: Vec<Metric>,
    #[serde(rename = "K")]
    pub k: usize,
    pub repeats: Vec<RepeatTrace>,
    /// Across-repeat mean per round and metric, over the repeats that reached
    /// that round.
    pub mean: Vec<Vec<f64>>,
    /// Sample standard deviation (zero with a single contributing repeat).
    pub std: Vec<Vec<f64>>,
}

/// One line of the long-format CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub repeat: usize,
    pub k: usize,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "repeat,k,metric_name,value";

impl Trace {
    pub fn from_repeats(metrics: Vec<Metric>, k: usize, repeats: Vec<RepeatTrace>) -> Self {
        let m = metrics.len();
        let rounds = repeats.iter().map(|r| r.values.len()).max().unwrap_or(0);
        let mut mean = vec![vec![0.0; m]; rounds];
        let mut std = vec![vec![0.0; m]; rounds];
        for kk in 0..rounds {
            let rows: Vec<&Vec<f64>> = repeats.iter().filter_map(|r| r.values.get(kk)).collect();
            let cnt = rows.len() as f64;
            for j in 0..m {
                let mu = rows.iter().map(|row| row[j]).sum::<f64>() / cnt;
                mean[kk][j] = mu;
                if rows.len() > 1 {
                    let ss: f64 = rows.iter().map(|row| (row[j] - mu).powi(2)).sum();
                    std[kk][j] = (ss / (cnt - 1.0)).sqrt();
                }
            }
        }
        Trace { metrics, k, repeats, mean, std }
    }

    pub fn metric_index(&self, m: Metric) -> Option<usize> {
        self.metrics.iter().position(|&x| x == m)
    }

    /// Mean curve of one metric.
    pub fn mean_curve(&self, m: Metric) -> Option<Vec<f64>> {
        let j = self.metric_index(m)?;
        Some(self.mean.iter().map(|row| row[j]).collect())
    }

    pub fn final_f(&self) -> Vec<Option<f64>> {
        self.repeats.iter().map(|r| r.final_f).collect()
    }

    pub fn any_diverged(&self) -> bool {
        self.repeats.iter().any(|r| r.diverged_at.is_some())
    }

    /// Mean of the metric's mean curve over the last `fraction` of rounds.
    pub fn plateau(&self, m: Metric, fraction: f64) -> Option<f64> {
        let curve = self.mean_curve(m)?;
        let tail = ((curve.len() as f64 * fraction).ceil() as usize).clamp(1, curve.len());
        Some(curve[curve.len() - tail..].iter().sum::<f64>() / tail as f64)
    }

    /// First round at which the mean curve comes within `band` of its plateau.
    pub fn rounds_to_plateau(&self, m: Metric, fraction: f64, band: f64) -> Option<usize> {
        let level = self.plateau(m, fraction)?;
        self.mean_curve(m)?.iter().position(|&v| v <= level + band)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out = Vec::new();
        for r in &self.repeats {
            for (k, row) in r.values.iter().enumerate() {
                for (&metric, &value) in self.metrics.iter().zip(row) {
                    out.push(CsvRow { repeat: r.repeat, k, metric, value });
                }
            }
        }
        out
    }

    /// Long format: `repeat,k,metric_name,value`, values in shortest
    /// round-trip notation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for row in self.csv_rows() {
            writeln!(s, "{},{},{},{}", row.repeat, row.k, row.metric, row.value).expect("string write");
        }
        s
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::ConfigInvalid(format!("trace CSV must start with '{CSV_HEADER}'")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::ConfigInvalid(format!("malformed trace CSV line {}: '{line}'", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CsvRow {
                repeat: f[0].parse().map_err(|_| bad())?,
                k: f[1].parse().map_err(|_| bad())?,
                metric: f[2].parse()?,
                value: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

pub fn write_trace(trace: &Trace, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => trace.to_csv(),
        OutputFormat::Json => serde_json::to_string_pretty(trace)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a JSON trace.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
