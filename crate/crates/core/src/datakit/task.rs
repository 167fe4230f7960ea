use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Single,
    Pair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKind {
    Classification {
        n_classes: usize,
        /// Optional names for string-labelled files; index = class id.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        label_names: Vec<String>,
    },
    Regression,
}

impl LabelKind {
    pub fn classes(n_classes: usize) -> Self {
        LabelKind::Classification {
            n_classes,
            label_names: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            LabelKind::Classification { n_classes, .. } => Some(*n_classes),
            LabelKind::Regression => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Real(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Real(_) => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Real(v) => v,
        }
    }
}

/// One labelled instance: one or two token sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub guid: String,
    pub text_a: Vec<String>,
    pub text_b: Option<Vec<String>>,
    pub label: Label,
}

/// Declares a task's input arity, label space, metrics and per-metric chance scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub arity: Arity,
    pub label_kind: LabelKind,
    pub metrics: Vec<Metric>,
    pub chance_scores: Vec<f64>,
}

impl TaskSpec {
    /// Binary accuracy task with chance 50.
    pub fn binary(name: impl Into<String>, arity: Arity) -> Self {
        Self {
            name: name.into(),
            arity,
            label_kind: LabelKind::classes(2),
            metrics: vec![Metric::Accuracy],
            chance_scores: vec![50.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::Config(format!("task {}: no metrics", self.name)));
        }
        if self.chance_scores.len() != self.metrics.len() {
            return Err(Error::Config(format!(
                "task {}: {} metrics but {} chance scores",
                self.name,
                self.metrics.len(),
                self.chance_scores.len()
            )));
        }
        if let LabelKind::Classification {
            n_classes,
            label_names,
        } = &self.label_kind
        {
            if *n_classes < 2 {
                return Err(Error::Config(format!(
                    "task {}: fewer than 2 classes",
                    self.name
                )));
            }
            if !label_names.is_empty() && label_names.len() != *n_classes {
                return Err(Error::Config(format!(
                    "task {}: {} label names for {} classes",
                    self.name,
                    label_names.len(),
                    n_classes
                )));
            }
        }
        for m in &self.metrics {
            let ok = match (m, &self.label_kind) {
                (Metric::Pearson | Metric::Spearman, _) => true,
                (_, LabelKind::Classification { n_classes, .. }) => {
                    !matches!(m, Metric::F1 | Metric::Matthews) || *n_classes == 2
                }
                (_, LabelKind::Regression) => false,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "task {}: metric {:?} does not fit label kind {:?}",
                    self.name, m, self.label_kind
                )));
            }
        }
        Ok(())
    }

    /// Chance score of the first (primary) metric.
    pub fn primary_chance(&self) -> f64 {
        self.chance_scores[0]
    }

    /// Checks one example against the arity and label constraints.
    pub fn check_example(&self, ex: &Example) -> Result<()> {
        match (self.arity, &ex.text_b) {
            (Arity::Single, Some(_)) => {
                return Err(Error::Data(format!(
                    "{}: single-sentence task {} has a second segment",
                    ex.guid, self.name
                )))
            }
            (Arity::Pair, None) => {
                return Err(Error::Data(format!(
                    "{}: pair task {} is missing its second segment",
                    ex.guid, self.name
                )))
            }
            _ => {}
        }
        match (&self.label_kind, ex.label) {
            (LabelKind::Classification { n_classes, .. }, Label::Class(c)) if c < *n_classes => {
                Ok(())
            }
            (LabelKind::Regression, Label::Real(v)) if v.is_finite() => Ok(()),
            (LabelKind::Regression, Label::Class(_)) => Ok(()),
            (kind, label) => Err(Error::Data(format!(
                "{}: label {:?} invalid for {:?}",
                ex.guid, label, kind
            ))),
        }
    }
}

/// A task with its train/dev/test splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskSpec,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    #[serde(default)]
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        for (name, split) in [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ] {
            let mut seen = HashSet::with_capacity(split.len());
            for ex in split {
                self.task.check_example(ex)?;
                if !seen.insert(ex.guid.as_str()) {
                    return Err(Error::Data(format!(
                        "task {}: duplicate guid {} in {name} split",
                        self.task.name, ex.guid
                    )));
                }
            }
        }
        Ok(())
    }
}
