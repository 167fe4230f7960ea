use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

static APPEND_LOCK: Mutex<()> = Mutex::new(());

/// Appends `record` as one JSON line. The line goes out in a single
/// `write_all` on an `O_APPEND` handle, so concurrent writers never
/// interleave within a line.
pub fn append_result<T: Serialize>(record: &T, path: &Path) -> Result<()> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let _guard = APPEND_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&line).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// Parses every non-empty line of a JSONL file.
pub fn read_results<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Row {
                path: path.to_owned(),
                row: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// The single manifest hash shared by `hashes`, or an error naming both
/// when artifacts from two manifests are mixed.
pub fn single_manifest<'a>(hashes: impl IntoIterator<Item = &'a str>) -> Result<Option<String>> {
    let mut seen: Option<&str> = None;
    for h in hashes {
        match seen {
            None => seen = Some(h),
            Some(s) if s != h => {
                return Err(Error::Data(format!(
                    "results from different manifests cannot be reported together ({s} vs {h})"
                )))
            }
            _ => {}
        }
    }
    Ok(seen.map(str::to_owned))
}
