use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::catalog::Level;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Acc,
}

impl Metric {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Metric::Mae => a < b,
            Metric::Acc => a > b,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Metric::Mae),
            "acc" => Ok(Metric::Acc),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMetric {
    pub mae: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold_id: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub targets: IndexMap<String, TargetMetric>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

/// Cross-validated results for one model at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub level: Level,
    pub epsilon: f64,
    pub delta: f64,
    pub folds: Vec<FoldMetrics>,
    pub targets: IndexMap<String, TargetSummary>,
    /// (author, target) pairs whose essay had no relevant sentence.
    #[serde(default)]
    pub degenerate_pairs: usize,
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricReport {
    /// Summarizes per-fold metrics; every fold must cover the same targets.
    pub fn from_folds(
        model: impl Into<String>,
        level: Level,
        epsilon: f64,
        delta: f64,
        folds: Vec<FoldMetrics>,
        degenerate_pairs: usize,
    ) -> Result<Self> {
        let first = folds
            .first()
            .ok_or_else(|| Error::Contract("report over zero folds".into()))?;
        let mut targets = IndexMap::new();
        for name in first.targets.keys() {
            let mut maes = Vec::with_capacity(folds.len());
            let mut accs = Vec::with_capacity(folds.len());
            for f in &folds {
                let m = f.targets.get(name).ok_or_else(|| {
                    Error::Contract(format!("fold {} has no metrics for {name}", f.fold_id))
                })?;
                maes.push(m.mae);
                accs.push(m.acc);
            }
            let (mae_mean, mae_std) = mean_std(&maes);
            let (acc_mean, acc_std) = mean_std(&accs);
            targets.insert(
                name.clone(),
                TargetSummary {
                    mae_mean,
                    mae_std,
                    acc_mean,
                    acc_std,
                },
            );
        }
        Ok(Self {
            model: model.into(),
            level,
            epsilon,
            delta,
            folds,
            targets,
            degenerate_pairs,
        })
    }

    /// The metric for `target` in every fold, in fold order.
    pub fn fold_values(&self, target: &str, metric: Metric) -> Option<Vec<f64>> {
        self.folds
            .iter()
            .map(|f| {
                f.targets.get(target).map(|m| match metric {
                    Metric::Mae => m.mae,
                    Metric::Acc => m.acc,
                })
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.display().to_string()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_table(&self) -> String {
        let width = self.targets.keys().map(String::len).max().unwrap_or(6).max(6);
        let acc_header = format!("ACC@{}", self.epsilon);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} at {} level, {} folds",
            self.model,
            self.level,
            self.folds.len()
        );
        let _ = writeln!(out, "{:<width$}  {:>15}  {:>15}", "target", "MAE", acc_header);
        for (name, s) in &self.targets {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>15}  {:>15}",
                format!("{:.3} ± {:.3}", s.mae_mean, s.mae_std),
                format!("{:.3} ± {:.3}", s.acc_mean, s.acc_std),
            );
        }
        out
    }
}

/// Markdown table of one metric across several reports, best cell per row
/// in bold. Rows follow the first report's target order.
pub fn comparison_table(reports: &[MetricReport], metric: Metric) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("nothing to compare".into()))?;
    let mut out = String::new();
    let _ = write!(out, "| target |");
    for r in reports {
        let _ = write!(out, " {} |", r.model);
    }
    let _ = write!(out, "\n|---|");
    for _ in reports {
        let _ = write!(out, "---:|");
    }
    out.push('\n');
    for name in first.targets.keys() {
        let cells: Vec<Option<(f64, f64)>> = reports
            .iter()
            .map(|r| {
                r.targets.get(name).map(|s| match metric {
                    Metric::Mae => (s.mae_mean, s.mae_std),
                    Metric::Acc => (s.acc_mean, s.acc_std),
                })
            })
            .collect();
        let best = cells
            .iter()
            .flatten()
            .map(|c| c.0)
            .reduce(|a, b| if metric.better(b, a) { b } else { a });
        let _ = write!(out, "| {name} |");
        for cell in &cells {
            match cell {
                Some((m, s)) => {
                    let text = format!("{m:.3} ± {s:.3}");
                    if Some(*m) == best && reports.len() > 1 {
                        let _ = write!(out, " **{text}** |");
                    } else {
                        let _ = write!(out, " {text} |");
                    }
                }
                None => {
                    let _ = write!(out, " - |");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}
