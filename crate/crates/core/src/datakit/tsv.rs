//! GLUE-style tab-separated files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::{Arity, Example, Label, LabelKind, TaskSpec};
use super::vocab::{detokenize, tokenize};
use crate::error::{Error, Result};

/// Refers to a column by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => write!(f, "{n:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    #[serde(default)]
    pub guid: Option<ColumnRef>,
    pub text_a: ColumnRef,
    #[serde(default)]
    pub text_b: Option<ColumnRef>,
    pub label: ColumnRef,
    #[serde(default = "yes")]
    pub header: bool,
}

fn yes() -> bool {
    true
}

impl ColumnMap {
    /// The layout written by [`write_tsv`].
    pub fn standard(arity: Arity) -> Self {
        Self {
            guid: Some(ColumnRef::Name("guid".into())),
            text_a: ColumnRef::Name("text_a".into()),
            text_b: (arity == Arity::Pair).then(|| ColumnRef::Name("text_b".into())),
            label: ColumnRef::Name("label".into()),
            header: true,
        }
    }
}

fn resolve(col: &ColumnRef, header: Option<&[String]>, path: &Path) -> Result<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Row {
                path: path.to_path_buf(),
                row: 1,
                msg: format!("column {name:?} not found in header"),
            }),
    }
}

fn parse_label(raw: &str, kind: &LabelKind) -> std::result::Result<Label, String> {
    let raw = raw.trim();
    match kind {
        LabelKind::Classification {
            n_classes,
            label_names,
        } => {
            let class = match raw.parse::<usize>() {
                Ok(c) => c,
                Err(_) => label_names
                    .iter()
                    .position(|n| n == raw)
                    .ok_or_else(|| format!("unparsable label {raw:?}"))?,
            };
            if class >= *n_classes {
                return Err(format!(
                    "label {class} out of range for {n_classes} classes"
                ));
            }
            Ok(Label::Class(class))
        }
        LabelKind::Regression => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Label::Real(v)),
            _ => Err(format!("unparsable regression label {raw:?}")),
        },
    }
}

/// Reads one split. `split` prefixes generated guids when no guid column is mapped.
pub fn load_tsv(
    path: &Path,
    task: &TaskSpec,
    columns: &ColumnMap,
    split: &str,
) -> Result<Vec<Example>> {
    if task.arity == Arity::Pair && columns.text_b.is_none() {
        return Err(Error::Config(format!(
            "{}: pair task {} needs a text_b column",
            path.display(),
            task.name
        )));
    }
    if task.arity == Arity::Single && columns.text_b.is_some() {
        return Err(Error::Config(format!(
            "{}: single-sentence task {} maps a text_b column",
            path.display(),
            task.name
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .quoting(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;

    let mut records = reader.records();
    let header: Option<Vec<String>> = if columns.header {
        match records.next() {
            Some(r) => {
                let r = r.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
                Some(r.iter().map(str::to_owned).collect())
            }
            None => Some(Vec::new()),
        }
    } else {
        None
    };
    let h = header.as_deref();
    let guid_col = columns
        .guid
        .as_ref()
        .map(|c| resolve(c, h, path))
        .transpose()?;
    let a_col = resolve(&columns.text_a, h, path)?;
    let b_col = columns
        .text_b
        .as_ref()
        .map(|c| resolve(c, h, path))
        .transpose()?;
    let label_col = resolve(&columns.label, h, path)?;

    let first_row = if columns.header { 2 } else { 1 };
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = first_row + i;
        let rec = rec.map_err(|e| Error::Row {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        })?;
        let row_err = |msg: String| Error::Row {
            path: path.to_path_buf(),
            row,
            msg,
        };
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        let field = |col: usize, what: &ColumnRef| {
            rec.get(col)
                .ok_or_else(|| row_err(format!("missing column {what}")))
        };
        let guid = match (guid_col, &columns.guid) {
            (Some(c), Some(r)) => field(c, r)?.to_owned(),
            _ => format!("{split}-{}", i),
        };
        let text_a = tokenize(field(a_col, &columns.text_a)?);
        let text_b = match (b_col, &columns.text_b) {
            (Some(c), Some(r)) => Some(tokenize(field(c, r)?)),
            _ => None,
        };
        let label =
            parse_label(field(label_col, &columns.label)?, &task.label_kind).map_err(row_err)?;
        let ex = Example {
            guid,
            text_a,
            text_b,
            label,
        };
        task.check_example(&ex)
            .map_err(|e| row_err(e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

/// Writes examples in the [`ColumnMap::standard`] layout.
pub fn write_tsv(path: &Path, examples: &[Example], arity: Arity) -> Result<()> {
    let mut text = String::from("guid\ttext_a");
    if arity == Arity::Pair {
        text.push_str("\ttext_b");
    }
    text.push_str("\tlabel\n");
    for ex in examples {
        text.push_str(&ex.guid);
        text.push('\t');
        text.push_str(&detokenize(&ex.text_a));
        if arity == Arity::Pair {
            text.push('\t');
            text.push_str(&detokenize(ex.text_b.as_deref().unwrap_or(&[])));
        }
        text.push('\t');
        match ex.label {
            Label::Class(c) => text.push_str(&c.to_string()),
            Label::Real(v) => text.push_str(&v.to_string()),
        }
        text.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
