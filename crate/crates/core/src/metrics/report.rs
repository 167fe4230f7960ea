use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::glue::{Cell, ScoreRow};
use crate::error::{Error, Result};

/// A rendered table row: per-task cells plus the two aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableLine {
    pub label: String,
    pub avg: f64,
    pub avg_ex: f64,
    pub cells: IndexMap<String, Cell>,
}

impl TableLine {
    pub fn new(row: &ScoreRow, avg: f64, avg_ex: f64) -> Self {
        Self {
            label: row.label.clone(),
            avg,
            avg_ex,
            cells: row.cells.clone(),
        }
    }
}

fn fmt_cell(cell: &Cell) -> String {
    let body = cell
        .values
        .iter()
        .map(|v| format!("{v:.1}"))
        .collect::<Vec<_>>()
        .join("/");
    if cell.substituted {
        format!("({body})")
    } else {
        body
    }
}

/// Fixed-width text table with one decimal. Substituted cells are shown in
/// parentheses.
pub fn render_table(lines: &[TableLine]) -> String {
    let Some(first) = lines.first() else {
        return String::new();
    };
    let mut header = vec!["".to_owned(), "Avg".to_owned(), "A.Ex".to_owned()];
    header.extend(first.cells.keys().cloned());
    let mut grid = vec![header];
    for line in lines {
        let mut r = vec![
            line.label.clone(),
            format!("{:.1}", line.avg),
            format!("{:.1}", line.avg_ex),
        ];
        for task in first.cells.keys() {
            r.push(
                line.cells
                    .get(task)
                    .map(fmt_cell)
                    .unwrap_or_else(|| "-".into()),
            );
        }
        grid.push(r);
    }
    let ncols = grid[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &grid {
        let mut line = String::new();
        for (c, field) in r.iter().enumerate() {
            if c == 0 {
                line.push_str(&format!("{field:<w$}", w = widths[c]));
            } else {
                line.push_str(&format!("  {field:>w$}", w = widths[c]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Full-precision CSV: `label,avg,avg_ex`, then `task#i` per metric and
/// `task:substituted` per task. Every line must share the first line's layout.
pub fn table_csv(lines: &[TableLine]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let layout: Vec<(String, usize)> = match lines.first() {
        Some(l) => l
            .cells
            .iter()
            .map(|(t, c)| (t.clone(), c.values.len()))
            .collect(),
        None => Vec::new(),
    };
    let mut header = vec!["label".to_owned(), "avg".to_owned(), "avg_ex".to_owned()];
    for (task, n) in &layout {
        header.extend((0..*n).map(|i| format!("{task}#{i}")));
        header.push(format!("{task}:substituted"));
    }
    let csv_err = |e: csv::Error| Error::Data(format!("table csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for line in lines {
        let mut rec = vec![
            line.label.clone(),
            line.avg.to_string(),
            line.avg_ex.to_string(),
        ];
        for (task, n) in &layout {
            let cell = line
                .cells
                .get(task)
                .filter(|c| c.values.len() == *n)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "row {:?} does not match the table layout at {task}",
                        line.label
                    ))
                })?;
            rec.extend(cell.values.iter().map(f64::to_string));
            rec.push(cell.substituted.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("table csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn parse_table_csv(text: &str) -> Result<Vec<TableLine>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Data(format!("table csv: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 3 || header[..3] != ["label", "avg", "avg_ex"] {
        return Err(Error::Data(
            "table csv: header must start with label,avg,avg_ex".into(),
        ));
    }
    let num = |s: &str, row: usize| {
        s.parse::<f64>()
            .map_err(|_| Error::Data(format!("table csv line {row}: bad number {s:?}")))
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("table csv line {row}: {e}")))?;
        let mut cells: IndexMap<String, Cell> = IndexMap::new();
        for (col, name) in header.iter().enumerate().skip(3) {
            let field = &rec[col];
            if let Some(task) = name.strip_suffix(":substituted") {
                let flag = field.parse::<bool>().map_err(|_| {
                    Error::Data(format!("table csv line {row}: bad flag {field:?}"))
                })?;
                cells
                    .entry(task.to_owned())
                    .or_insert_with(|| Cell::new(Vec::new()))
                    .substituted = flag;
            } else if let Some((task, _)) = name.rsplit_once('#') {
                let v = num(field, row)?;
                cells
                    .entry(task.to_owned())
                    .or_insert_with(|| Cell::new(Vec::new()))
                    .values
                    .push(v);
            } else {
                return Err(Error::Data(format!("table csv: unknown column {name:?}")));
            }
        }
        out.push(TableLine {
            label: rec[0].to_owned(),
            avg: num(&rec[1], row)?,
            avg_ex: num(&rec[2], row)?,
            cells,
        });
    }
    Ok(out)
}
