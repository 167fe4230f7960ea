//! Built-in correctness checks: finite-difference gradients for the full
//! encoder and for each op in isolation, and the metrics against
//! definitional oracles.

use rand::Rng as _;

use crate::autodiff::{grad_check, Axis, GradCheckReport, Graph, NodeId, Tensor};
use crate::datakit::{CLS_ID, MASK_ID, SEP_ID};
use crate::encoder::{
    build_lm_loss, build_pooled, init_params, EncoderConfig, LmExample, ModelInput, ObjectiveStyle,
    Pooling,
};
use crate::error::{Error, Result};
use crate::metrics::{f1_binary, matthews, pearson, spearman};
use crate::rng::{seeded, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const ENCODER_TOLERANCE: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-7;
pub const METRIC_TOLERANCE: f64 = 1e-10;
pub const ENCODER_PARAM_LIMIT: usize = 5000;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape")
}

/// The three encoder variants checked by [`encoder_grad_check`].
pub fn grad_check_configs() -> Vec<EncoderConfig> {
    [
        (ObjectiveStyle::MaskedLm, Pooling::ClsToken),
        (ObjectiveStyle::CausalLm, Pooling::LastToken),
        (ObjectiveStyle::MaskedLm, Pooling::SiamesePair),
    ]
    .into_iter()
    .map(|(objective_style, pooling)| EncoderConfig {
        vocab_size: 10,
        max_len: 6,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        dropout_rate: 0.0,
        pooling,
        objective_style,
    })
    .collect()
}

/// Gradient check of the whole encoder (pooled output plus LM loss).
pub fn encoder_grad_check(cfg: &EncoderConfig, seed: u64) -> Result<GradCheckReport> {
    if cfg.param_count() > ENCODER_PARAM_LIMIT {
        return Err(Error::Config(format!(
            "{} parameters exceed the {ENCODER_PARAM_LIMIT} grad-check budget",
            cfg.param_count()
        )));
    }
    let mut rng = seeded(seed);
    let mut tensors = init_params(cfg, seed)?.into_tensors();
    // perturb well past the init scale so every path carries signal
    for t in &mut tensors {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
    }
    let top = cfg.vocab_size - 1;
    let input = match cfg.pooling {
        Pooling::SiamesePair => {
            ModelInput::Pair(vec![CLS_ID, 5, 6, SEP_ID], vec![CLS_ID, 7, SEP_ID])
        }
        _ => ModelInput::Joint(vec![CLS_ID, 5, 6, SEP_ID, 7, SEP_ID]),
    };
    let lm = LmExample {
        input: vec![CLS_ID, MASK_ID, top - 1, SEP_ID],
        positions: vec![1, 2],
        targets: vec![5, top],
    };
    grad_check(
        |g, p| {
            let pooled = build_pooled(g, p, cfg, &input, None)?;
            let lm_loss = build_lm_loss(g, p, cfg, std::slice::from_ref(&lm), None)?
                .ok_or_else(|| Error::Config("empty LM example".into()))?;
            let sq = g.mul(pooled, pooled)?;
            let task = g.mean(sq);
            g.add(task, lm_loss)
        },
        &tensors,
        FD_STEP,
    )
}

/// Worst error over [`grad_check_configs`].
pub fn max_encoder_error(seed: u64) -> Result<f64> {
    grad_check_configs()
        .iter()
        .map(|c| encoder_grad_check(c, seed).map(|r| r.max_relative_error))
        .try_fold(0.0f64, |m, e| e.map(|e| m.max(e)))
}

/// Reduces `out` to a scalar through fixed random weights so the upstream
/// gradient differs per coordinate.
fn weighted_sum(g: &mut Graph, out: NodeId) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let w = random(&shape, -1.0, 1.0, &mut seeded(99));
    let w = g.input(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

type OpCase = (
    &'static str,
    Vec<Tensor>,
    Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>,
);

fn op_cases(rng: &mut Rng) -> Vec<OpCase> {
    let m = |r: usize, c: usize, rng: &mut Rng| random(&[r, c], -1.0, 1.0, rng);
    // abs is checked away from its kink
    let away_from_zero = {
        let mut t = m(3, 4, rng);
        for x in t.data_mut() {
            *x = x.signum() * (0.2 + x.abs());
        }
        t
    };
    let drop_mask: Vec<f64> = (0..12)
        .map(|i| if i % 3 == 0 { 0.0 } else { 1.0 / 0.9 })
        .collect();
    let fill_mask: Vec<bool> = (0..12).map(|i| i % 4 == 1).collect();
    vec![
        (
            "matmul",
            vec![m(3, 4, rng), m(4, 2, rng)],
            Box::new(|g, p| {
                let o = g.matmul(p[0], p[1])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "add_broadcast",
            vec![m(3, 4, rng), m(1, 4, rng)],
            Box::new(|g, p| {
                let o = g.add(p[0], p[1])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "sub",
            vec![m(3, 4, rng), m(3, 4, rng)],
            Box::new(|g, p| {
                let o = g.sub(p[0], p[1])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "mul",
            vec![m(3, 4, rng), m(3, 4, rng)],
            Box::new(|g, p| {
                let o = g.mul(p[0], p[1])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "scale",
            vec![m(3, 4, rng)],
            Box::new(|g, p| {
                let o = g.scale(p[0], -1.7);
                weighted_sum(g, o)
            }),
        ),
        (
            "softmax",
            vec![m(3, 5, rng)],
            Box::new(|g, p| {
                let o = g.softmax(p[0]);
                weighted_sum(g, o)
            }),
        ),
        (
            "layer_norm",
            vec![m(3, 5, rng), m(1, 5, rng), m(1, 5, rng)],
            Box::new(|g, p| {
                let o = g.layer_norm(p[0], p[1], p[2])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "gelu",
            vec![random(&[3, 4], -3.0, 3.0, rng)],
            Box::new(|g, p| {
                let o = g.gelu(p[0]);
                weighted_sum(g, o)
            }),
        ),
        (
            "tanh",
            vec![random(&[3, 4], -2.0, 2.0, rng)],
            Box::new(|g, p| {
                let o = g.tanh(p[0]);
                weighted_sum(g, o)
            }),
        ),
        (
            "abs",
            vec![away_from_zero],
            Box::new(|g, p| {
                let o = g.abs(p[0]);
                weighted_sum(g, o)
            }),
        ),
        (
            "embedding",
            vec![m(6, 3, rng)],
            Box::new(|g, p| {
                let o = g.embedding(p[0], &[4, 0, 4, 2])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "gather_rows",
            vec![m(5, 3, rng)],
            Box::new(|g, p| {
                let o = g.gather_rows(p[0], &[1, 1, 3])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "concat_rows",
            vec![m(2, 3, rng), m(1, 3, rng)],
            Box::new(|g, p| {
                let o = g.concat(&[p[0], p[1]], Axis::Rows)?;
                weighted_sum(g, o)
            }),
        ),
        (
            "concat_cols",
            vec![m(2, 3, rng), m(2, 1, rng)],
            Box::new(|g, p| {
                let o = g.concat(&[p[0], p[1]], Axis::Cols)?;
                weighted_sum(g, o)
            }),
        ),
        (
            "slice",
            vec![m(4, 5, rng)],
            Box::new(|g, p| {
                let a = g.slice(p[0], Axis::Cols, 1, 4)?;
                let o = g.slice(a, Axis::Rows, 2, 4)?;
                weighted_sum(g, o)
            }),
        ),
        (
            "transpose",
            vec![m(3, 4, rng)],
            Box::new(|g, p| {
                let o = g.transpose(p[0])?;
                weighted_sum(g, o)
            }),
        ),
        (
            "cross_entropy",
            vec![m(4, 3, rng)],
            Box::new(|g, p| g.cross_entropy(p[0], &[2, 0, 1, 2])),
        ),
        (
            "mse",
            vec![m(4, 1, rng)],
            Box::new(|g, p| {
                let t = g.input(Tensor::matrix(4, 1, vec![0.5, -0.25, 1.0, 0.0]).expect("shape"));
                g.mse(p[0], t)
            }),
        ),
        (
            "dropout",
            vec![m(3, 4, rng)],
            Box::new(move |g, p| {
                let o = g.dropout(p[0], drop_mask.clone())?;
                weighted_sum(g, o)
            }),
        ),
        (
            "masked_fill",
            vec![m(3, 4, rng)],
            Box::new(move |g, p| {
                let o = g.masked_fill(p[0], &fill_mask, -1e9)?;
                let o = g.softmax(o);
                weighted_sum(g, o)
            }),
        ),
        (
            "sum",
            vec![m(3, 4, rng)],
            Box::new(|g, p| {
                let sq = g.mul(p[0], p[0])?;
                Ok(g.sum(sq))
            }),
        ),
        (
            "mean",
            vec![m(3, 4, rng)],
            Box::new(|g, p| {
                let sq = g.mul(p[0], p[0])?;
                Ok(g.mean(sq))
            }),
        ),
        (
            "max_rows",
            vec![m(4, 3, rng)],
            Box::new(|g, p| {
                let o = g.max_rows(p[0]);
                weighted_sum(g, o)
            }),
        ),
    ]
}

/// Gradient check of every op on its own.
pub fn op_grad_checks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = seeded(seed);
    op_cases(&mut rng)
        .into_iter()
        .map(|(name, params, build)| Ok((name, grad_check(|g, p| build(g, p), &params, FD_STEP)?)))
        .collect()
}

mod oracle {
    /// Matthews from the general confusion-matrix expression
    /// `(c*s - sum p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))`.
    pub fn matthews(preds: &[usize], golds: &[usize]) -> f64 {
        let mut c = [[0.0f64; 2]; 2];
        for (&p, &g) in preds.iter().zip(golds) {
            c[g][p] += 1.0;
        }
        let s: f64 = c.iter().flatten().sum();
        let correct = c[0][0] + c[1][1];
        let p = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
        let t = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
        let num = correct * s - (p[0] * t[0] + p[1] * t[1]);
        let den =
            ((s * s - p[0] * p[0] - p[1] * p[1]) * (s * s - t[0] * t[0] - t[1] * t[1])).sqrt();
        if den == 0.0 {
            0.0
        } else {
            100.0 * num / den
        }
    }

    pub fn f1(preds: &[usize], golds: &[usize]) -> f64 {
        let tp = preds
            .iter()
            .zip(golds)
            .filter(|&(&p, &g)| p == 1 && g == 1)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(golds)
            .filter(|&(&p, &g)| p == 1 && g == 0)
            .count() as f64;
        let fn_ = preds
            .iter()
            .zip(golds)
            .filter(|&(&p, &g)| p == 0 && g == 1)
            .count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            100.0 * 2.0 * tp / (2.0 * tp + fp + fn_)
        }
    }

    /// `None` when either input is constant.
    pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let vx = n * sxx - sx * sx;
        let vy = n * syy - sy * sy;
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        if constant(x) || constant(y) {
            return None;
        }
        Some(100.0 * (n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt()))
    }

    /// Average ranks by counting, O(n^2).
    pub fn ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|a| {
                let below = x.iter().filter(|b| *b < a).count() as f64;
                let equal = x.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
        pearson(&ranks(x), &ranks(y))
    }
}

/// Largest disagreement between each metric and its oracle over
/// `instances` random cases, which include all-one-class predictions,
/// heavy ties and constant inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricOracleReport {
    pub matthews: f64,
    pub f1: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub cases: usize,
}

impl MetricOracleReport {
    pub fn max(&self) -> f64 {
        self.matthews
            .max(self.f1)
            .max(self.pearson)
            .max(self.spearman)
    }
}

fn agree(metric: &str, got: Result<f64>, want: Option<f64>) -> Result<f64> {
    match (got, want) {
        (Ok(a), Some(b)) => Ok((a - b).abs()),
        (Err(_), None) => Ok(0.0),
        (got, want) => Err(Error::Data(format!(
            "{metric}: got {got:?}, oracle says {want:?}"
        ))),
    }
}

pub fn metric_oracle_check(instances: usize, seed: u64) -> Result<MetricOracleReport> {
    let mut rng = seeded(seed);
    let mut r = MetricOracleReport::default();
    for i in 0..instances {
        let n = rng.gen_range(2..40);
        // every fifth case collapses to one predicted class or one gold class
        let labels = |rng: &mut Rng, collapse: bool| -> Vec<usize> {
            (0..n)
                .map(|_| if collapse { 1 } else { rng.gen_range(0..2) })
                .collect()
        };
        let preds = labels(&mut rng, i % 5 == 0);
        let golds = labels(&mut rng, i % 5 == 1);
        r.matthews = r.matthews.max(agree(
            "matthews",
            matthews(&preds, &golds),
            Some(oracle::matthews(&preds, &golds)),
        )?);
        r.f1 = r.f1.max(agree(
            "f1",
            f1_binary(&preds, &golds, 1),
            Some(oracle::f1(&preds, &golds)),
        )?);

        // coarse grids force ties; every seventh case is constant
        let levels = if i % 3 == 0 { 3 } else { 50 };
        let real = |rng: &mut Rng, constant: bool| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if constant {
                        2.5
                    } else {
                        rng.gen_range(0..levels) as f64 / 10.0
                    }
                })
                .collect()
        };
        let x = real(&mut rng, i % 7 == 0);
        let y = real(&mut rng, false);
        r.pearson = r
            .pearson
            .max(agree("pearson", pearson(&x, &y), oracle::pearson(&x, &y))?);
        r.spearman = r.spearman.max(agree(
            "spearman",
            spearman(&x, &y),
            oracle::spearman(&x, &y),
        )?);
        r.cases += 1;
    }
    Ok(r)
}
