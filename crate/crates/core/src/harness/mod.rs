//! Experiment orchestration: restart sweeps, degenerate-run counting,
//! regime comparison grids and plot data.

mod experiment;
mod export;
mod grid;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Regime;

pub use experiment::{materialize, pretrain_corpus, Experiment};
pub use export::{stability_export, STABILITY_HEADER};
pub use grid::{comparison_grid, grid_from_records, row_label, Grid, BEST_OF_EACH};
pub use sweep::{run_restarts, run_restarts_with, RestartOptions, Sweep};

pub const DEFAULT_EPSILON: f64 = 2.0;
/// Thresholds reported by [`epsilon_sensitivity`].
pub const EPSILON_SWEEP: [f64; 3] = [1.0, 2.0, 5.0];
pub const DEFAULT_RESTARTS: usize = 20;

/// One finished (or aborted) restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub regime: Regime,
    pub intermediate: Option<String>,
    pub target: String,
    pub seed: u64,
    pub cap: Option<usize>,
    /// Target examples actually trained on.
    pub train_size: usize,
    /// Target dev scores, primary metric first.
    pub scores: Vec<f64>,
    /// Chance level of the primary metric.
    pub chance: f64,
    pub degenerate: bool,
    /// Error message of an aborted run, whose scores are set to chance.
    #[serde(default)]
    pub aborted: Option<String>,
    pub wall_seconds: f64,
    pub manifest_hash: String,
}

impl RunRecord {
    pub fn primary(&self) -> f64 {
        self.scores.first().copied().unwrap_or(f64::NAN)
    }

    /// `stilts-synth_related` style tag; just the regime name without an
    /// intermediate task.
    pub fn regime_tag(&self) -> String {
        match &self.intermediate {
            Some(i) => format!("{}-{i}", self.regime),
            None => self.regime.to_string(),
        }
    }

    pub fn cap_tag(&self) -> String {
        self.cap
            .map_or_else(|| "full".to_owned(), |c| c.to_string())
    }

    /// `{target}_{regime}_{cap}_{seed}`, shared by the record's JSON file and
    /// its checkpoint.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.target,
            self.regime_tag(),
            self.cap_tag(),
            self.seed
        )
    }
}

/// Number of scores within `epsilon` of `chance`.
pub fn degenerate_count(scores: &[f64], chance: f64, epsilon: f64) -> Result<usize> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
    }
    Ok(scores
        .iter()
        .filter(|s| (*s - chance).abs() <= epsilon)
        .count())
}

/// Degenerate counts at each threshold of [`EPSILON_SWEEP`].
pub fn epsilon_sensitivity(scores: &[f64], chance: f64) -> Vec<(f64, usize)> {
    EPSILON_SWEEP
        .iter()
        .map(|&e| {
            (
                e,
                degenerate_count(scores, chance, e).expect("positive epsilon"),
            )
        })
        .collect()
}

/// Distribution of one sweep's primary scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Seed of the best dev score; ties go to the lowest seed.
    pub best_seed: u64,
    pub degenerate: usize,
    /// `(seed, score)` sorted by seed.
    pub scores: Vec<(u64, f64)>,
}

impl SweepSummary {
    pub fn from_scores(scores: &[(u64, f64)], chance: f64, epsilon: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Config(
                "a sweep summary needs at least one run".into(),
            ));
        }
        let mut scores = scores.to_vec();
        scores.sort_by_key(|&(seed, _)| seed);
        let values: Vec<f64> = scores.iter().map(|&(_, s)| s).collect();
        let (mean, std) = mean_std(&values);
        let (best_seed, max) = scores
            .iter()
            .copied()
            .fold(None, |best: Option<(u64, f64)>, (seed, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((seed, s)),
            })
            .expect("non-empty");
        Ok(Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max,
            best_seed,
            degenerate: degenerate_count(&values, chance, epsilon)?,
            scores,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|&(_, s)| s).collect()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
