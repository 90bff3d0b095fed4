//! Confusion matrices and the accuracy / macro-F1 / weighted-F1 suite.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskSchema;
use crate::error::{Error, Result};

/// Rows are gold labels, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn from_indices(preds: &[usize], golds: &[usize], labels: &[String]) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions for {} gold labels",
                preds.len(),
                golds.len()
            )));
        }
        let n = labels.len();
        let mut cells = vec![vec![0u64; n]; n];
        for (&p, &g) in preds.iter().zip(golds) {
            for x in [p, g] {
                if x >= n {
                    return Err(Error::LabelOutOfRange { label: x, n_labels: n });
                }
            }
            cells[g][p] += 1;
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            cells,
            total: preds.len() as u64,
        })
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.cells[i][i]).sum()
    }
}

pub fn confusion<S: AsRef<str>>(preds: &[S], golds: &[S], schema: &TaskSchema) -> Result<ConfusionMatrix> {
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let index = |s: &S| {
        schema.index_of(s.as_ref()).ok_or_else(|| {
            Error::SchemaMismatch(format!("label {:?} is not in schema {}", s.as_ref(), schema.name))
        })
    };
    let p: Vec<usize> = preds.iter().map(index).collect::<Result<_>>()?;
    let g: Vec<usize> = golds.iter().map(index).collect::<Result<_>>()?;
    ConfusionMatrix::from_indices(&p, &g, &schema.labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

/// Zero-division yields 0; macro F1 averages over every schema class,
/// including classes with no support.
pub fn evaluate(cm: &ConfusionMatrix) -> Result<EvaluationReport> {
    if cm.total == 0 {
        return Err(Error::Empty("confusion matrix with no examples".into()));
    }
    let n = cm.labels.len();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.cells[c][c];
            let predicted: u64 = (0..n).map(|g| cm.cells[g][c]).sum();
            let support: u64 = cm.cells[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: cm.labels[c].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n as f64;
    let weighted_f1 = per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / cm.total as f64;
    Ok(EvaluationReport {
        accuracy: cm.trace() as f64 / cm.total as f64,
        macro_f1,
        weighted_f1,
        per_class,
        confusion: cm.clone(),
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn render(&self, precision: Precision) -> String {
        let mut out = String::new();
        let w = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(12);
        let _ = writeln!(out, "{:<w$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<w$}  {:>9}  {:>9}  {:>9}  {:>7}",
                c.label,
                precision.fmt(c.precision),
                precision.fmt(c.recall),
                precision.fmt(c.f1),
                c.support
            );
        }
        let _ = writeln!(out, "{:<w$}  {:>9}", "accuracy", precision.fmt(self.accuracy));
        let _ = writeln!(out, "{:<w$}  {:>9}", "macro_f1", precision.fmt(self.macro_f1));
        let _ = writeln!(out, "{:<w$}  {:>9}", "weighted_f1", precision.fmt(self.weighted_f1));
        out
    }
}

/// Rendering precision: four decimals for validation tables, two for the
/// test-set summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Four,
    Two,
}

impl Precision {
    /// Truncates (does not round) to the chosen number of decimals.
    pub fn fmt(self, x: f64) -> String {
        let (digits, scale) = match self {
            Precision::Four => (4, 1e4),
            Precision::Two => (2, 1e2),
        };
        let t = (x * scale + 1e-9).floor() / scale;
        format!("{t:.digits$}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub system: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Index of the macro-F1 winner (earliest on ties).
    pub winner: usize,
}

impl ComparisonTable {
    pub fn winner_name(&self) -> &str {
        &self.rows[self.winner].system
    }

    pub fn render_text(&self, precision: Precision) -> String {
        let w = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "  {:<w$}  {:>9}  {:>9}  {:>11}", "system", "accuracy", "macro_f1", "weighted_f1");
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if i == self.winner { '*' } else { ' ' };
            let _ = writeln!(
                out,
                "{mark} {:<w$}  {:>9}  {:>9}  {:>11}",
                r.system,
                precision.fmt(r.accuracy),
                precision.fmt(r.macro_f1),
                precision.fmt(r.weighted_f1)
            );
        }
        out
    }

    pub fn render_tsv(&self, precision: Precision) -> String {
        let mut out = String::from("system\taccuracy\tmacro_f1\tweighted_f1\twinner\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.system,
                precision.fmt(r.accuracy),
                precision.fmt(r.macro_f1),
                precision.fmt(r.weighted_f1),
                i == self.winner
            );
        }
        out
    }
}

/// Index of the highest macro F1, first on ties.
pub(crate) fn best_by_macro_f1<'a>(scores: impl IntoIterator<Item = &'a EvaluationReport>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| r.macro_f1 > b) {
            best = Some((i, r.macro_f1));
        }
    }
    best.map(|(i, _)| i)
}

pub fn compare(systems: &[(String, EvaluationReport)]) -> Result<ComparisonTable> {
    if systems.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least two systems, got {}",
            systems.len()
        )));
    }
    let labels = &systems[0].1.confusion.labels;
    if let Some((name, _)) = systems.iter().find(|(_, r)| &r.confusion.labels != labels) {
        return Err(Error::SchemaMismatch(format!(
            "system {name} was scored on a different label set than {}",
            systems[0].0
        )));
    }
    let winner = best_by_macro_f1(systems.iter().map(|(_, r)| r)).expect("non-empty");
    Ok(ComparisonTable {
        rows: systems
            .iter()
            .map(|(name, r)| ComparisonRow {
                system: name.clone(),
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                weighted_f1: r.weighted_f1,
            })
            .collect(),
        winner,
    })
}
