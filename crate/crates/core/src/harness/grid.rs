use indexmap::IndexMap;

use super::sweep::{run_restarts, RestartOptions, Sweep};
use super::RunRecord;
use crate::error::{Error, Result};
use crate::metrics::{
    best_of_each, glue_aggregate, render_table, same_task_substitution, table_csv, AvgExConvention,
    Cell, GridRow, ScoreRow, TableLine,
};
use crate::pipeline::{Regime, RegimePlan, RunContext};
use crate::store::single_manifest;

pub const BEST_OF_EACH: &str = "Best-of-Each";

/// Regime and intermediate task of a grid row.
type RowKey = (Regime, Option<String>);

/// Regime rows against target columns, each cell the dev-best restart.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub roster: Vec<String>,
    pub cap: Option<usize>,
    /// Regime rows after same-task substitution, without Best-of-Each.
    pub rows: Vec<GridRow>,
    /// Rendered lines: every regime row, then Best-of-Each.
    pub lines: Vec<TableLine>,
    /// Per roster task, the row index Best-of-Each took its cell from.
    pub winners: Vec<usize>,
}

impl Grid {
    pub fn render(&self) -> String {
        render_table(&self.lines)
    }

    pub fn csv(&self) -> Result<String> {
        table_csv(&self.lines)
    }
}

/// `{i, t}->t` style label. With a one-task roster the target is named,
/// otherwise it is written as `t`.
pub fn row_label(regime: Regime, intermediate: Option<&str>, roster: &[String]) -> String {
    let t = if roster.len() == 1 {
        roster[0].as_str()
    } else {
        "t"
    };
    let i = intermediate.unwrap_or("");
    match regime {
        Regime::Baseline => {
            if roster.len() == 1 {
                t.to_owned()
            } else {
                "baseline".to_owned()
            }
        }
        Regime::Stilts => format!("{i}->{t}"),
        Regime::Multitask => format!("{{{i}, {t}}}"),
        Regime::MultitaskThenTarget => format!("{{{i}, {t}}}->{t}"),
    }
}

fn best_record<'a>(records: &[&'a RunRecord]) -> &'a RunRecord {
    records
        .iter()
        .copied()
        .fold(None, |best: Option<&RunRecord>, r| match best {
            Some(b)
                if b.primary() > r.primary()
                    || (b.primary() == r.primary() && b.seed <= r.seed) =>
            {
                Some(b)
            }
            _ => Some(r),
        })
        .expect("non-empty group")
}

/// Builds the comparison grid from stored records. Rows and columns keep
/// the order in which they first appear in `records`.
pub fn grid_from_records(records: &[RunRecord]) -> Result<Grid> {
    if records.is_empty() {
        return Err(Error::Data("no run records to tabulate".into()));
    }
    single_manifest(records.iter().map(|r| r.manifest_hash.as_str()))?;
    let cap = records[0].cap;
    if let Some(r) = records.iter().find(|r| r.cap != cap) {
        return Err(Error::Data(format!(
            "one grid cannot mix caps {} and {}",
            records[0].cap_tag(),
            r.cap_tag()
        )));
    }

    let mut roster: Vec<String> = Vec::new();
    let mut groups: IndexMap<RowKey, IndexMap<String, Vec<&RunRecord>>> = IndexMap::new();
    for r in records {
        if !roster.contains(&r.target) {
            roster.push(r.target.clone());
        }
        groups
            .entry((r.regime, r.intermediate.clone()))
            .or_default()
            .entry(r.target.clone())
            .or_default()
            .push(r);
    }

    let mut rows = Vec::with_capacity(groups.len());
    let mut baseline: Option<ScoreRow> = None;
    for ((regime, int), by_target) in &groups {
        let mut row = ScoreRow::new(row_label(*regime, int.as_deref(), &roster));
        for task in &roster {
            match by_target.get(task) {
                Some(rs) => {
                    row.cells
                        .insert(task.clone(), Cell::new(best_record(rs).scores.clone()));
                }
                None if int.as_deref() == Some(task.as_str()) => {
                    row.cells.insert(task.clone(), Cell::new(Vec::new()));
                }
                None => {
                    return Err(Error::Data(format!(
                    "row {} has no runs for target {task}; grid plans must share the target roster",
                    row.label
                )))
                }
            }
        }
        if *regime == Regime::Baseline {
            baseline = Some(row.clone());
        }
        rows.push(GridRow {
            row,
            intermediate: int.clone(),
        });
    }
    let needs_baseline = rows
        .iter()
        .any(|g| g.intermediate.as_ref().is_some_and(|i| roster.contains(i)));
    if needs_baseline {
        let base = baseline.ok_or_else(|| {
            Error::Data("a same-task cell needs a baseline row to substitute from".into())
        })?;
        rows = same_task_substitution(&rows, &base)?;
    }

    let excluded: Vec<String> = rows
        .iter()
        .filter_map(|g| g.intermediate.clone())
        .filter(|i| roster.contains(i))
        .collect();
    let plain: Vec<ScoreRow> = rows.iter().map(|g| g.row.clone()).collect();
    let (best, winners) = best_of_each(&plain, BEST_OF_EACH)?;
    let lines = plain
        .iter()
        .chain(std::iter::once(&best))
        .map(|row| {
            let agg = glue_aggregate(row, &roster, &excluded, AvgExConvention::PairAveraged)?;
            Ok(TableLine::new(row, agg.avg, agg.avg_ex))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid {
        roster,
        cap,
        rows,
        lines,
        winners,
    })
}

/// Sweeps every plan and tabulates the dev-best restarts.
pub fn comparison_grid(
    ctx: &RunContext<'_>,
    plans: &[RegimePlan],
    n: usize,
    seed_base: u64,
    opts: &RestartOptions,
) -> Result<(Grid, Vec<Sweep>)> {
    let sweeps = plans
        .iter()
        .map(|p| run_restarts(ctx, p, n, seed_base, opts))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RunRecord> = sweeps
        .iter()
        .flat_map(|s| s.records.iter().cloned())
        .collect();
    Ok((grid_from_records(&records)?, sweeps))
}
