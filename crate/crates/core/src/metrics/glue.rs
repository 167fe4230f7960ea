use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One task's score: one value per metric (two for dual-metric tasks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub values: Vec<f64>,
    /// Set when the value was copied from the baseline because the row's
    /// intermediate task is this task.
    #[serde(default)]
    pub substituted: bool,
}

impl Cell {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            substituted: false,
        }
    }

    /// Mean over the cell's metrics.
    pub fn score(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }
}

/// A labelled table row: task name -> cell, in column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub label: String,
    pub cells: IndexMap<String, Cell>,
}

impl ScoreRow {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            cells: IndexMap::new(),
        }
    }

    pub fn with(mut self, task: &str, values: &[f64]) -> Self {
        self.cells
            .insert(task.to_owned(), Cell::new(values.to_vec()));
        self
    }

    pub fn cell(&self, task: &str) -> Result<&Cell> {
        self.cells.get(task).ok_or_else(|| {
            Error::Data(format!("row {:?} has no score for task {task}", self.label))
        })
    }
}

/// How dual-metric tasks enter the average that excludes overlapping tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgExConvention {
    /// Average the task's metrics first, as for the plain average.
    #[default]
    PairAveraged,
    /// Use only the task's first metric.
    FirstMetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub avg: f64,
    pub avg_ex: f64,
}

/// Unweighted macro average over `roster`, and the same average with
/// `exclude` left out.
pub fn glue_aggregate(
    row: &ScoreRow,
    roster: &[String],
    exclude: &[String],
    convention: AvgExConvention,
) -> Result<Aggregate> {
    if roster.is_empty() {
        return Err(Error::Config("empty task roster".into()));
    }
    let mut total = 0.0;
    let mut total_ex = 0.0;
    let mut n_ex = 0usize;
    for task in roster {
        let cell = row.cell(task)?;
        total += cell.score();
        if !exclude.contains(task) {
            total_ex += match convention {
                AvgExConvention::PairAveraged => cell.score(),
                AvgExConvention::FirstMetric => cell.first(),
            };
            n_ex += 1;
        }
    }
    let avg = total / roster.len() as f64;
    let avg_ex = if n_ex == 0 {
        f64::NAN
    } else {
        total_ex / n_ex as f64
    };
    Ok(Aggregate { avg, avg_ex })
}

/// Per task, the cell of the row with the highest task score.
///
/// Ties go to an unsubstituted cell, then to the earliest row. Returns the
/// combined row and, per task in roster order, the index of the winning row.
pub fn best_of_each(rows: &[ScoreRow], label: &str) -> Result<(ScoreRow, Vec<usize>)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Config("best-of-each needs at least one row".into()))?;
    let mut out = ScoreRow::new(label);
    let mut winners = Vec::with_capacity(first.cells.len());
    for task in first.cells.keys() {
        let mut best: Option<(usize, &Cell)> = None;
        for (i, row) in rows.iter().enumerate() {
            let cell = row.cell(task)?;
            let better = match best {
                None => true,
                Some((_, b)) => {
                    cell.score() > b.score()
                        || (cell.score() == b.score() && b.substituted && !cell.substituted)
                }
            };
            if better {
                best = Some((i, cell));
            }
        }
        let (i, cell) = best.expect("non-empty rows");
        winners.push(i);
        out.cells.insert(task.clone(), cell.clone());
    }
    Ok((out, winners))
}

/// A comparison-grid row and the intermediate task it was trained through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub row: ScoreRow,
    pub intermediate: Option<String>,
}

/// Replaces every cell whose task equals the row's intermediate task with
/// the baseline's cell, flagged as substituted.
pub fn same_task_substitution(grid: &[GridRow], baseline: &ScoreRow) -> Result<Vec<GridRow>> {
    grid.iter()
        .map(|g| {
            let mut g = g.clone();
            if let Some(int) = &g.intermediate {
                if let Some(cell) = g.row.cells.get_mut(int) {
                    let mut replacement = baseline.cell(int)?.clone();
                    replacement.substituted = true;
                    *cell = replacement;
                }
            }
            Ok(g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster() -> Vec<String> {
        ["a", "b", "c"].map(String::from).to_vec()
    }

    #[test]
    fn uniform_scores_average_to_themselves() {
        let row = ScoreRow::new("x")
            .with("a", &[70.0])
            .with("b", &[70.0, 70.0])
            .with("c", &[70.0]);
        let agg = glue_aggregate(
            &row,
            &roster(),
            &["b".into()],
            AvgExConvention::PairAveraged,
        )
        .unwrap();
        assert_eq!(agg.avg, 70.0);
        assert_eq!(agg.avg_ex, 70.0);
    }

    #[test]
    fn missing_task_is_named() {
        let row = ScoreRow::new("x").with("a", &[1.0]);
        let err = glue_aggregate(&row, &roster(), &[], AvgExConvention::PairAveraged)
            .unwrap_err()
            .to_string();
        assert!(err.contains("task b"), "{err}");
    }

    #[test]
    fn aggregate_ignores_task_order() {
        let row = ScoreRow::new("x")
            .with("a", &[10.0])
            .with("b", &[20.0, 40.0])
            .with("c", &[33.0]);
        let mut rev = roster();
        rev.reverse();
        let a = glue_aggregate(&row, &roster(), &[], AvgExConvention::PairAveraged).unwrap();
        let b = glue_aggregate(&row, &rev, &[], AvgExConvention::PairAveraged).unwrap();
        assert!((a.avg - b.avg).abs() < 1e-12);
    }

    #[test]
    fn first_metric_convention() {
        let row = ScoreRow::new("x")
            .with("a", &[10.0])
            .with("b", &[20.0, 40.0])
            .with("c", &[30.0]);
        let agg =
            glue_aggregate(&row, &roster(), &["c".into()], AvgExConvention::FirstMetric).unwrap();
        assert_eq!(agg.avg_ex, 15.0);
        assert!((agg.avg - 70.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_is_its_own_best() {
        let row = ScoreRow::new("x").with("a", &[1.0]).with("b", &[2.0, 3.0]);
        let (best, winners) = best_of_each(std::slice::from_ref(&row), "best").unwrap();
        assert_eq!(best.cells, row.cells);
        assert_eq!(winners, vec![0, 0]);
    }

    #[test]
    fn dual_metrics_come_from_one_row() {
        let r1 = ScoreRow::new("1").with("a", &[90.0, 10.0]);
        let r2 = ScoreRow::new("2").with("a", &[60.0, 60.0]);
        let (best, winners) = best_of_each(&[r1, r2], "best").unwrap();
        assert_eq!(best.cells["a"].values, vec![60.0, 60.0]);
        assert_eq!(winners, vec![1]);
    }

    #[test]
    fn dominated_row_contributes_nothing() {
        let top = ScoreRow::new("top").with("a", &[5.0]).with("b", &[5.0]);
        let low = ScoreRow::new("low").with("a", &[1.0]).with("b", &[1.0]);
        let (_, winners) = best_of_each(&[low, top], "best").unwrap();
        assert_eq!(winners, vec![1, 1]);
    }

    #[test]
    fn substitution_flags_and_loses_ties() {
        let base = ScoreRow::new("base").with("a", &[80.0]).with("b", &[50.0]);
        let via_a = GridRow {
            row: ScoreRow::new("->a").with("a", &[99.0]).with("b", &[40.0]),
            intermediate: Some("a".into()),
        };
        let grid = same_task_substitution(&[via_a], &base).unwrap();
        assert!(grid[0].row.cells["a"].substituted);
        assert_eq!(grid[0].row.cells["a"].values, vec![80.0]);
        assert!(!grid[0].row.cells["b"].substituted);

        // substituted copy listed first still loses the tie to the baseline
        let (_, winners) = best_of_each(&[grid[0].row.clone(), base], "best").unwrap();
        assert_eq!(winners[0], 1);
    }

    #[test]
    fn no_matching_cells_leaves_grid_unchanged() {
        let base = ScoreRow::new("base").with("a", &[80.0]);
        let g = GridRow {
            row: ScoreRow::new("->z").with("a", &[70.0]),
            intermediate: Some("z".into()),
        };
        assert_eq!(
            same_task_substitution(std::slice::from_ref(&g), &base).unwrap(),
            vec![g]
        );
    }
}
