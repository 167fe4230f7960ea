//! Task metrics, chance baselines and GLUE-style aggregation.
//!
//! Every score is returned on the percentage scale used in result tables:
//! accuracy and F1 in `[0, 100]`, correlations multiplied by 100.

mod glue;
mod report;

pub use glue::{
    best_of_each, glue_aggregate, same_task_substitution, Aggregate, AvgExConvention, Cell,
    GridRow, ScoreRow,
};
pub use report::{parse_table_csv, render_table, table_csv, TableLine};

use serde::{Deserialize, Serialize};

use crate::datakit::{Label, LabelKind, TaskSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    Matthews,
    Pearson,
    Spearman,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Matthews => "matthews",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }
}

fn check_lengths(metric: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric {
            metric,
            msg: format!("{a} predictions for {b} gold labels"),
        });
    }
    if a == 0 {
        return Err(Error::Metric {
            metric,
            msg: "empty input".into(),
        });
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths("accuracy", preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / golds.len() as f64)
}

/// Binary confusion counts `(tp, fp, fn, tn)` for class `positive`.
fn confusion(preds: &[usize], golds: &[usize], positive: usize) -> (f64, f64, f64, f64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    (tp, fp, fn_, tn)
}

/// F1 of the `positive` class; 0 when precision + recall is 0.
pub fn f1_binary(preds: &[usize], golds: &[usize], positive: usize) -> Result<f64> {
    check_lengths("f1", preds.len(), golds.len())?;
    let (tp, fp, fn_, _) = confusion(preds, golds, positive);
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Matthews correlation (×100) for binary labels, class 1 positive; 0 when
/// any marginal is empty.
pub fn matthews(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths("matthews", preds.len(), golds.len())?;
    if let Some(bad) = preds.iter().chain(golds).find(|&&v| v > 1) {
        return Err(Error::Metric {
            metric: "matthews",
            msg: format!("label {bad} is not binary"),
        });
    }
    let (tp, fp, fn_, tn) = confusion(preds, golds, 1);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (tp * tn - fp * fn_) / denom.sqrt())
}

/// Pearson product-moment correlation (×100).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson_named("pearson", x, y)
}

fn pearson_named(metric: &'static str, x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(metric, x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::Metric {
            metric,
            msg: "needs at least two points".into(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric {
            metric,
            msg: "constant input has undefined correlation".into(),
        });
    }
    Ok(100.0 * sxy / (sxx.sqrt() * syy.sqrt()))
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (×100): Pearson on fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths("spearman", x.len(), y.len())?;
    pearson_named("spearman", &fractional_ranks(x), &fractional_ranks(y))
}

/// Model outputs for one split.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Reals(Vec<f64>),
}

/// Scores `preds` on every metric of `task`, in metric order.
pub fn evaluate(task: &TaskSpec, preds: &Predictions, golds: &[Label]) -> Result<Vec<f64>> {
    let gold_reals: Vec<f64> = golds.iter().map(|l| l.as_f64()).collect();
    task.metrics
        .iter()
        .map(|&m| match (m, preds) {
            (Metric::Pearson, Predictions::Reals(p)) => pearson(p, &gold_reals),
            (Metric::Spearman, Predictions::Reals(p)) => spearman(p, &gold_reals),
            (Metric::Pearson | Metric::Spearman, Predictions::Classes(p)) => {
                let p: Vec<f64> = p.iter().map(|&c| c as f64).collect();
                if m == Metric::Pearson {
                    pearson(&p, &gold_reals)
                } else {
                    spearman(&p, &gold_reals)
                }
            }
            (_, Predictions::Classes(p)) => {
                let g: Vec<usize> = golds
                    .iter()
                    .map(|l| {
                        l.class().ok_or_else(|| Error::Metric {
                            metric: m.name(),
                            msg: "real-valued gold label".into(),
                        })
                    })
                    .collect::<Result<_>>()?;
                match m {
                    Metric::Accuracy => accuracy(p, &g),
                    Metric::F1 => f1_binary(p, &g, 1),
                    Metric::Matthews => matthews(p, &g),
                    _ => unreachable!(),
                }
            }
            (_, Predictions::Reals(_)) => Err(Error::Metric {
                metric: m.name(),
                msg: "needs class predictions".into(),
            }),
        })
        .collect()
}

/// Most frequent gold class (smallest id on ties).
pub fn majority_label(golds: &[usize]) -> Option<usize> {
    let max = golds.iter().copied().max()?;
    let mut counts = vec![0usize; max + 1];
    for &g in golds {
        counts[g] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|&c| c == best)
}

/// Scores of the constant most-frequent-label predictor on every metric of `task`.
pub fn majority_baseline(task: &TaskSpec, golds: &[Label]) -> Result<Cell> {
    if !matches!(task.label_kind, LabelKind::Classification { .. }) {
        return Err(Error::Config(format!(
            "majority baseline needs a classification task, {} is regression",
            task.name
        )));
    }
    let classes: Vec<usize> = golds.iter().filter_map(|l| l.class()).collect();
    let majority = majority_label(&classes).ok_or_else(|| Error::Metric {
        metric: "majority",
        msg: "empty input".into(),
    })?;
    let preds = Predictions::Classes(vec![majority; classes.len()]);
    Ok(Cell::new(evaluate(task, &preds, golds)?))
}
