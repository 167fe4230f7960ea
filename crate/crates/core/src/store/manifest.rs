use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::datakit::{ColumnMap, SynthConfig, TaskSpec};
use crate::encoder::{EncoderConfig, ObjectiveStyle, Pooling};
use crate::error::{Error, Result};
use crate::pipeline::{PhaseConfig, Regime};

/// Where a task's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    /// Yields `synth_related`, `synth_unrelated` and `synth_target`.
    Synth {
        grammar_seed: u64,
        #[serde(default)]
        config: SynthConfig,
    },
    /// Real/fake detection over the built-in desk corpus.
    Fake {
        name: String,
        corpus_sentences: usize,
        corpus_seed: u64,
        train: usize,
        dev: usize,
        seed: u64,
    },
    Tsv {
        task: TaskSpec,
        train: PathBuf,
        dev: PathBuf,
        #[serde(default)]
        columns: Option<ColumnMap>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSpec {
    pub max_size: usize,
    /// Load this vocabulary instead of building one from the training splits.
    pub path: Option<PathBuf>,
}

impl Default for VocabSpec {
    fn default() -> Self {
        Self {
            max_size: 5000,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSpec {
    /// Sentences taken, in task order, from the training splits.
    pub sentences: usize,
    pub phase: PhaseConfig,
    /// Start from this checkpoint instead of pretraining.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self {
            sentences: 4000,
            phase: PhaseConfig {
                epochs: 2,
                seed: 1,
                ..PhaseConfig::lm()
            },
            checkpoint: None,
        }
    }
}

/// A regime plan that names its tasks instead of embedding them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub regime: Regime,
    #[serde(default)]
    pub intermediate: Option<String>,
    pub target: String,
    #[serde(default)]
    pub intermediate_phase: PhaseConfig,
    #[serde(default)]
    pub target_phase: PhaseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// `vocab_size` 0 means "the size of the built vocabulary".
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub vocab: VocabSpec,
    pub tasks: Vec<TaskSource>,
    #[serde(default)]
    pub pretrain: PretrainSpec,
    pub plans: Vec<PlanSpec>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Overrides every plan's target `train_cap` when set.
    #[serde(default)]
    pub cap: Option<usize>,
    /// Restarts use seeds `seed..seed + restarts`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// `key=value` overrides applied on top of the file, in order.
    #[serde(default)]
    pub overrides: Vec<String>,
}

fn default_restarts() -> usize {
    20
}
fn default_workers() -> usize {
    1
}
fn default_epsilon() -> f64 {
    2.0
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// Fields left out of the hash: output location and parallelism never change
/// a result, and seed, restart count and cap only choose which runs happen
/// (every record carries its own seed and cap).
const UNHASHED: [&str; 6] = ["out", "workers", "overrides", "seed", "restarts", "cap"];

impl Manifest {
    /// The synthetic pair experiment: four regimes on `synth_target` with
    /// the related intermediate, plus STILTs through the unrelated one.
    pub fn desk() -> Self {
        let target_phase = PhaseConfig::default();
        let intermediate_phase = PhaseConfig::default();
        let plan = |regime, intermediate: Option<&str>| PlanSpec {
            regime,
            intermediate: intermediate.map(str::to_owned),
            target: "synth_target".into(),
            intermediate_phase: intermediate_phase.clone(),
            target_phase: target_phase.clone(),
        };
        Manifest {
            encoder: EncoderConfig {
                vocab_size: 0,
                max_len: 16,
                d_model: 32,
                n_heads: 4,
                n_layers: 2,
                dropout_rate: 0.1,
                pooling: Pooling::ClsToken,
                objective_style: ObjectiveStyle::MaskedLm,
            },
            vocab: VocabSpec {
                max_size: 500,
                path: None,
            },
            tasks: vec![TaskSource::Synth {
                grammar_seed: 7,
                config: SynthConfig::default(),
            }],
            pretrain: PretrainSpec::default(),
            plans: vec![
                plan(Regime::Baseline, None),
                plan(Regime::Stilts, Some("synth_related")),
                plan(Regime::Multitask, Some("synth_related")),
                plan(Regime::MultitaskThenTarget, Some("synth_related")),
                plan(Regime::Stilts, Some("synth_unrelated")),
            ],
            restarts: default_restarts(),
            cap: Some(200),
            seed: 0,
            workers: default_workers(),
            epsilon: default_epsilon(),
            out: default_out(),
            overrides: Vec::new(),
        }
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("manifest is not valid JSON: {e}")))?;
        Self::from_value(value, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, overrides)
    }

    /// Applies `overrides` and records them in the `overrides` field.
    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut m: Manifest =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.overrides.extend(overrides.iter().cloned());
        m.validate()?;
        Ok(m)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_value(serde_json::to_value(self)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if self.cap == Some(0) {
            return Err(Error::Config("cap must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("manifest declares no tasks".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every result-relevant field.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Value::Object(map) = &mut v {
            for k in UNHASHED {
                map.remove(k);
            }
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Sets a dotted path such as `plans.1.target_phase.base_lr=0.01`. The value
/// is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!(
            "override key {path:?} has an empty segment"
        )));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_owned(), value);
                    return Ok(());
                }
                map.entry(*key)
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| {
                    Error::Config(format!("override {path:?}: {key:?} is not a list index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("override {path:?}: index {idx} past {len} items"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "override {path:?}: {} is not an object",
                    keys[..i].join(".")
                )))
            }
        };
    }
    Ok(())
}
