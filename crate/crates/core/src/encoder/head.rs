use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::INIT_STD;
use crate::autodiff::Tensor;
use crate::datakit::{LabelKind, TaskSpec};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification { n_classes: usize },
    Regression,
}

impl HeadKind {
    pub fn for_task(task: &TaskSpec) -> Self {
        match task.label_kind {
            LabelKind::Classification { n_classes, .. } => HeadKind::Classification { n_classes },
            LabelKind::Regression => HeadKind::Regression,
        }
    }

    pub fn out_dim(self) -> usize {
        match self {
            HeadKind::Classification { n_classes } => n_classes,
            HeadKind::Regression => 1,
        }
    }
}

/// A single linear output layer on top of the pooled representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kind: HeadKind,
    /// `pooled_dim x out_dim`
    pub weight: Tensor,
    /// `1 x out_dim`
    pub bias: Tensor,
}

impl Head {
    pub fn new(task: &TaskSpec, pooled_dim: usize, seed: u64) -> Self {
        let kind = HeadKind::for_task(task);
        let out = kind.out_dim();
        let mut rng = seeded(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let data = (0..pooled_dim * out)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Head {
            kind,
            weight: Tensor::matrix(pooled_dim, out, data).expect("positive dims"),
            bias: Tensor::zeros(&[1, out]),
        }
    }

    pub fn pooled_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.kind.out_dim()
    }
}

/// A newly initialized head for `task`, sized like `old`'s input. Nothing is
/// carried over from `old`.
pub fn swap_head(old: &Head, task: &TaskSpec, seed: u64) -> Head {
    Head::new(task, old.pooled_dim(), seed)
}
