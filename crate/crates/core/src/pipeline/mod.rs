//! Training regimes: LM pretraining, single-phase fine-tuning, intermediate
//! then target training, and the two multitask variants.

mod phase;
mod regime;
mod sampler;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};

pub use phase::{
    batch_loss, encode_examples, evaluate_model, lm_corpus, lm_eval_loss, predict, pretrain_lm,
    run_phase, LossParts, PhaseOutcome, PhaseResult, PhaseStart,
};
pub use regime::{
    run_multitask, run_regime, run_stilts, target_subsample_seed, Regime, RegimeOutcome,
    RegimePlan, RunContext,
};
pub use sampler::ProportionalSampler;

pub const DEFAULT_EPOCHS: usize = 3;
pub const DEFAULT_AUX_LM_WEIGHT: f64 = 0.5;
pub const DESK_BATCH_SIZE: usize = 32;
pub const DESK_LR: f64 = 1e-3;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    LmOnly,
    TaskOnly,
    TaskPlusAuxLm { weight: f64 },
}

impl Objective {
    /// Task loss plus the LM loss weighted by [`DEFAULT_AUX_LM_WEIGHT`].
    pub fn aux_default() -> Self {
        Objective::TaskPlusAuxLm {
            weight: DEFAULT_AUX_LM_WEIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub objective: Objective,
    /// Zero is allowed and leaves the parameters untouched.
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Training examples kept after downsampling without replacement.
    pub train_cap: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            objective: Objective::TaskOnly,
            epochs: DEFAULT_EPOCHS,
            batch_size: DESK_BATCH_SIZE,
            base_lr: DESK_LR,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            seed: 0,
            train_cap: None,
            adam: AdamConfig::default(),
        }
    }
}

impl PhaseConfig {
    /// Batch 24, learning rate 2e-5: the full-scale fine-tuning recipe.
    pub fn full_scale_preset() -> Self {
        Self {
            batch_size: 24,
            base_lr: 2e-5,
            ..Self::default()
        }
    }

    pub fn lm() -> Self {
        Self {
            objective: Objective::LmOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "base_lr {} must be positive",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if let Objective::TaskPlusAuxLm { weight } = self.objective {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::Config(format!(
                    "auxiliary LM weight {weight} must be positive"
                )));
            }
        }
        if self.train_cap == Some(0) {
            return Err(Error::Config("train_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let p = PhaseConfig::default();
        assert_eq!(p.epochs, 3);
        assert_eq!(p.batch_size, 32);
        let full = PhaseConfig::full_scale_preset();
        assert_eq!(
            (full.batch_size, full.base_lr, full.epochs),
            (24, 2e-5, 3)
        );
    }

    #[test]
    fn aux_weight_must_be_positive() {
        let p = PhaseConfig {
            objective: Objective::TaskPlusAuxLm { weight: 0.0 },
            ..PhaseConfig::default()
        };
        assert!(p.validate().is_err());
        assert!(PhaseConfig {
            objective: Objective::aux_default(),
            ..PhaseConfig::default()
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn phase_config_json_uses_defaults() {
        let p: PhaseConfig =
            serde_json::from_str(r#"{"epochs": 5, "objective": {"kind": "task_only"}}"#).unwrap();
        assert_eq!(p.epochs, 5);
        assert_eq!(p.batch_size, DESK_BATCH_SIZE);
        assert!(serde_json::from_str::<PhaseConfig>(r#"{"epoch": 5}"#).is_err());
    }
}
