use indexmap::IndexMap;

use super::{mean_std, RunRecord};
use crate::error::{Error, Result};

pub const STABILITY_HEADER: [&str; 8] = [
    "kind", "task", "regime", "cap", "seed", "score", "mean", "std",
];

/// Strip-plot data: one `run` row per record, then one `summary` row with
/// the population mean and std of each (task, regime, cap) group. Groups
/// keep their first-seen order; runs within a group are sorted by seed.
pub fn stability_export(records: &[RunRecord]) -> Result<String> {
    let mut groups: IndexMap<(String, String, String), Vec<&RunRecord>> = IndexMap::new();
    for r in records {
        groups
            .entry((r.target.clone(), r.regime_tag(), r.cap_tag()))
            .or_default()
            .push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("writing stability csv: {e}"));
    w.write_record(STABILITY_HEADER).map_err(csv_err)?;
    for ((task, regime, cap), mut runs) in groups {
        runs.sort_by_key(|r| r.seed);
        for r in &runs {
            w.write_record([
                "run",
                &task,
                &regime,
                &cap,
                &r.seed.to_string(),
                &r.primary().to_string(),
                "",
                "",
            ])
            .map_err(csv_err)?;
        }
        let scores: Vec<f64> = runs.iter().map(|r| r.primary()).collect();
        let (mean, std) = mean_std(&scores);
        w.write_record([
            "summary",
            &task,
            &regime,
            &cap,
            "",
            "",
            &mean.to_string(),
            &std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("writing stability csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
