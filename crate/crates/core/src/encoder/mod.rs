//! Small pre-norm Transformer sentence encoder with swappable task heads.

mod head;
mod model;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub use head::{swap_head, Head, HeadKind};
pub use model::{
    bind_params, build_lm_loss, build_pooled, causal_lm_positions, encode, encode_graph,
    lm_example, lm_logits, model_input, pool, pool_graph, LmExample, ModelInput,
    ATTENTION_MASK_FILL, MLM_RATE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Hidden state of the leading `[CLS]` token.
    ClsToken,
    /// Hidden state of the final non-pad token.
    LastToken,
    /// Segments encoded separately, max-pooled and projected to `u`, `v`,
    /// then combined as `[u; v; |u - v|; u * v]`.
    SiamesePair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveStyle {
    /// Bidirectional attention, pretrained by predicting masked tokens.
    MaskedLm,
    /// Left-to-right attention, pretrained by predicting the next token.
    CausalLm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
    pub objective_style: ObjectiveStyle,
}

impl EncoderConfig {
    /// Desk-scale defaults: 32 positions, width 64, 4 heads, 2 layers.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 32,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            dropout_rate: 0.1,
            pooling: Pooling::ClsToken,
            objective_style: ObjectiveStyle::MaskedLm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.vocab_size <= crate::datakit::MASK_ID {
            return Err(Error::Config(
                "vocab_size must cover the special tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the pooled representation fed to task heads.
    pub fn pooled_dim(&self) -> usize {
        match self.pooling {
            Pooling::SiamesePair => 4 * self.d_model,
            _ => self.d_model,
        }
    }

    /// Closed form: `Vd + Ld + N(12d^2 + 13d) + 2d + dV + V + d^2 + d`.
    pub fn param_count(&self) -> usize {
        let (v, l, d, n) = (self.vocab_size, self.max_len, self.d_model, self.n_layers);
        v * d + l * d + n * (12 * d * d + 13 * d) + 2 * d + d * v + v + d * d + d
    }
}

const PER_LAYER: usize = 16;

/// Offsets of a layer's tensors relative to its base index.
pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const WQ: usize = 2;
    pub const BQ: usize = 3;
    pub const WK: usize = 4;
    pub const BK: usize = 5;
    pub const WV: usize = 6;
    pub const BV: usize = 7;
    pub const WO: usize = 8;
    pub const BO: usize = 9;
    pub const LN2_G: usize = 10;
    pub const LN2_B: usize = 11;
    pub const W1: usize = 12;
    pub const B1: usize = 13;
    pub const W2: usize = 14;
    pub const B2: usize = 15;

    pub const LNF_G: usize = 0;
    pub const LNF_B: usize = 1;
    pub const LM_W: usize = 2;
    pub const LM_B: usize = 3;
    pub const POOL_W: usize = 4;
    pub const POOL_B: usize = 5;
}

pub(crate) const TOK_EMB: usize = 0;
pub(crate) const POS_EMB: usize = 1;

pub(crate) fn layer_base(layer: usize) -> usize {
    2 + layer * PER_LAYER
}

pub(crate) fn final_base(cfg: &EncoderConfig) -> usize {
    layer_base(cfg.n_layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of every tensor, in storage order.
fn layout_with_init(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, l, d) = (cfg.vocab_size, cfg.max_len, cfg.d_model);
    let mut out = vec![
        ("tok_emb".to_owned(), vec![v, d], Init::Normal),
        ("pos_emb".to_owned(), vec![l, d], Init::Normal),
    ];
    for i in 0..cfg.n_layers {
        let p = |s: &str| format!("layer{i}.{s}");
        out.extend([
            (p("ln1_g"), vec![1, d], Init::Ones),
            (p("ln1_b"), vec![1, d], Init::Zeros),
            (p("wq"), vec![d, d], Init::Normal),
            (p("bq"), vec![1, d], Init::Zeros),
            (p("wk"), vec![d, d], Init::Normal),
            (p("bk"), vec![1, d], Init::Zeros),
            (p("wv"), vec![d, d], Init::Normal),
            (p("bv"), vec![1, d], Init::Zeros),
            (p("wo"), vec![d, d], Init::Normal),
            (p("bo"), vec![1, d], Init::Zeros),
            (p("ln2_g"), vec![1, d], Init::Ones),
            (p("ln2_b"), vec![1, d], Init::Zeros),
            (p("w1"), vec![d, 4 * d], Init::Normal),
            (p("b1"), vec![1, 4 * d], Init::Zeros),
            (p("w2"), vec![4 * d, d], Init::Normal),
            (p("b2"), vec![1, d], Init::Zeros),
        ]);
    }
    out.extend([
        ("lnf_g".to_owned(), vec![1, d], Init::Ones),
        ("lnf_b".to_owned(), vec![1, d], Init::Zeros),
        ("lm_w".to_owned(), vec![d, v], Init::Normal),
        ("lm_b".to_owned(), vec![1, v], Init::Zeros),
        ("pool_w".to_owned(), vec![d, d], Init::Normal),
        ("pool_b".to_owned(), vec![1, d], Init::Zeros),
    ]);
    out
}

/// Names and shapes of the parameter tensors, in storage order.
pub fn param_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    layout_with_init(cfg)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect()
}

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    /// Wraps tensors after checking them against the config's layout.
    pub fn from_tensors(cfg: &EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = param_layout(cfg);
        if layout.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, config requires {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let tensors = layout_with_init(cfg)
        .into_iter()
        .map(|(_, shape, init)| match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::filled(&shape, 1.0),
            Init::Normal => {
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("layout shape")
            }
        })
        .collect();
    Ok(EncoderParams { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 100,
            max_len: 32,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            dropout_rate: 0.0,
            pooling: Pooling::ClsToken,
            objective_style: ObjectiveStyle::MaskedLm,
        }
    }

    #[test]
    fn param_count_matches_hand_count() {
        // 3200 + 1024 + 2 * (12288 + 416) + 64 + 3200 + 100 + 1024 + 32
        assert_eq!(cfg().param_count(), 34052);
        assert_eq!(init_params(&cfg(), 0).unwrap().count(), 34052);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(&cfg(), 7).unwrap();
        assert_eq!(a, init_params(&cfg(), 7).unwrap());
        assert_ne!(a, init_params(&cfg(), 8).unwrap());
    }

    #[test]
    fn biases_zero_gains_one() {
        let p = init_params(&cfg(), 1).unwrap();
        for ((name, _), t) in param_layout(&cfg()).iter().zip(p.tensors()) {
            if name.ends_with("_g") {
                assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
            } else if name.ends_with("_b") || name.contains(".b") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn bad_head_split_rejected() {
        let c = EncoderConfig {
            n_heads: 5,
            ..cfg()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = init_params(&cfg(), 0).unwrap().into_tensors();
        let other = EncoderConfig {
            d_model: 16,
            ..cfg()
        };
        assert!(EncoderParams::from_tensors(&other, p.clone()).is_err());
        assert!(EncoderParams::from_tensors(&cfg(), p).is_ok());
    }
}
