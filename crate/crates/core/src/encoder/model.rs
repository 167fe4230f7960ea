use rand::Rng as _;

use super::{
    final_base, layer_base, slot, EncoderConfig, EncoderParams, ObjectiveStyle, Pooling, POS_EMB,
    TOK_EMB,
};
use crate::autodiff::{Axis, Graph, NodeId, Tensor};
use crate::datakit::{Example, Vocab, CLS_ID, MASK_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Score given to disallowed attention slots before the softmax.
pub const ATTENTION_MASK_FILL: f64 = -1e9;
/// Share of maskable positions replaced by `[MASK]`.
pub const MLM_RATE: f64 = 0.15;

/// Adds the encoder tensors to `g`, as trainable parameters or as constants.
pub fn bind_params(g: &mut Graph, params: &EncoderParams, trainable: bool) -> Vec<NodeId> {
    params
        .tensors()
        .iter()
        .map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            }
        })
        .collect()
}

fn dropout(g: &mut Graph, x: NodeId, rate: f64, rng: Option<&mut Rng>) -> Result<NodeId> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    g.dropout(x, mask)
}

fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn attention(
    g: &mut Graph,
    p: &[NodeId],
    base: usize,
    cfg: &EncoderConfig,
    h: NodeId,
    blocked: &[bool],
) -> Result<NodeId> {
    let q = linear(g, h, p[base + slot::WQ], p[base + slot::BQ])?;
    let k = linear(g, h, p[base + slot::WK], p[base + slot::BK])?;
    let v = linear(g, h, p[base + slot::WV], p[base + slot::BV])?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for i in 0..cfg.n_heads {
        let (lo, hi) = (i * dh, (i + 1) * dh);
        let qh = g.slice(q, Axis::Cols, lo, hi)?;
        let kh = g.slice(k, Axis::Cols, lo, hi)?;
        let vh = g.slice(v, Axis::Cols, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let scores = g.masked_fill(scores, blocked, ATTENTION_MASK_FILL)?;
        let weights = g.softmax(scores);
        heads.push(g.matmul(weights, vh)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat(&heads, Axis::Cols)?
    };
    linear(g, joined, p[base + slot::WO], p[base + slot::BO])
}

fn check_ids(cfg: &EncoderConfig, ids: &[usize], valid: &[bool]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Data("cannot encode an empty sequence".into()));
    }
    if ids.len() > cfg.max_len {
        return Err(Error::OutOfRange {
            what: "sequence length",
            index: ids.len(),
            limit: cfg.max_len,
        });
    }
    if valid.len() != ids.len() {
        return Err(Error::Data(format!(
            "attention mask has {} entries for {} tokens",
            valid.len(),
            ids.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::OutOfRange {
            what: "token id",
            index: bad,
            limit: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Hidden states (`len x d_model`) of one sequence. `valid[i]` is false
/// for padding, which no position may attend to.
pub fn encode_graph(
    g: &mut Graph,
    p: &[NodeId],
    cfg: &EncoderConfig,
    ids: &[usize],
    valid: &[bool],
    mut rng: Option<&mut Rng>,
) -> Result<NodeId> {
    check_ids(cfg, ids, valid)?;
    let n = ids.len();
    let causal = cfg.objective_style == ObjectiveStyle::CausalLm;
    let blocked: Vec<bool> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            !valid[j] || (causal && j > i)
        })
        .collect();

    let tok = g.embedding(p[TOK_EMB], ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = g.embedding(p[POS_EMB], &positions)?;
    let mut x = g.add(tok, pos)?;
    x = dropout(g, x, cfg.dropout_rate, rng.as_deref_mut())?;

    for layer in 0..cfg.n_layers {
        let b = layer_base(layer);
        let h = g.layer_norm(x, p[b + slot::LN1_G], p[b + slot::LN1_B])?;
        let a = attention(g, p, b, cfg, h, &blocked)?;
        let a = dropout(g, a, cfg.dropout_rate, rng.as_deref_mut())?;
        x = g.add(x, a)?;

        let h = g.layer_norm(x, p[b + slot::LN2_G], p[b + slot::LN2_B])?;
        let f = linear(g, h, p[b + slot::W1], p[b + slot::B1])?;
        let f = g.gelu(f);
        let f = linear(g, f, p[b + slot::W2], p[b + slot::B2])?;
        let f = dropout(g, f, cfg.dropout_rate, rng.as_deref_mut())?;
        x = g.add(x, f)?;
    }
    let fb = final_base(cfg);
    g.layer_norm(x, p[fb + slot::LNF_G], p[fb + slot::LNF_B])
}

fn valid_rows(valid: &[bool]) -> Vec<usize> {
    valid
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| i)
        .collect()
}

/// Pooled representation (`1 x pooled_dim`) from one segment, or two for
/// siamese pooling, each given as hidden states plus its validity mask.
pub fn pool_graph(
    g: &mut Graph,
    p: &[NodeId],
    cfg: &EncoderConfig,
    segments: &[(NodeId, &[bool])],
) -> Result<NodeId> {
    let need = if cfg.pooling == Pooling::SiamesePair {
        2
    } else {
        1
    };
    if segments.len() != need {
        return Err(Error::Config(format!(
            "{:?} pooling takes {need} segment(s), got {}",
            cfg.pooling,
            segments.len()
        )));
    }
    for (h, valid) in segments {
        if !valid.iter().any(|&v| v) {
            return Err(Error::Data("segment has no non-pad position".into()));
        }
        if g.value(*h).rows() != valid.len() {
            return Err(Error::Data(
                "attention mask does not match hidden states".into(),
            ));
        }
    }
    match cfg.pooling {
        Pooling::ClsToken => g.slice(segments[0].0, Axis::Rows, 0, 1),
        Pooling::LastToken => {
            let (h, valid) = segments[0];
            let last = *valid_rows(valid).last().expect("checked non-empty");
            g.slice(h, Axis::Rows, last, last + 1)
        }
        Pooling::SiamesePair => {
            let fb = final_base(cfg);
            let mut projected = Vec::with_capacity(2);
            for (h, valid) in segments {
                let rows = g.gather_rows(*h, &valid_rows(valid))?;
                let m = g.max_rows(rows);
                projected.push(linear(g, m, p[fb + slot::POOL_W], p[fb + slot::POOL_B])?);
            }
            let (u, v) = (projected[0], projected[1]);
            let diff = g.sub(u, v)?;
            let dist = g.abs(diff);
            let prod = g.mul(u, v)?;
            g.concat(&[u, v, dist, prod], Axis::Cols)
        }
    }
}

/// Token ids for one example, laid out for the configured pooling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelInput {
    /// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, encoded jointly.
    Joint(Vec<usize>),
    /// `[CLS] a [SEP]` and `[CLS] b [SEP]`, encoded independently.
    Pair(Vec<usize>, Vec<usize>),
}

impl ModelInput {
    /// The first (or only) sequence, used for auxiliary LM losses.
    pub fn primary(&self) -> &[usize] {
        match self {
            ModelInput::Joint(ids) | ModelInput::Pair(ids, _) => ids,
        }
    }
}

pub fn model_input(vocab: &Vocab, cfg: &EncoderConfig, ex: &Example) -> Result<ModelInput> {
    match (cfg.pooling, &ex.text_b) {
        (Pooling::SiamesePair, None) => Err(Error::Config(format!(
            "siamese pooling needs sentence pairs, example {} has one sentence",
            ex.guid
        ))),
        (Pooling::SiamesePair, Some(b)) => Ok(ModelInput::Pair(
            vocab.encode_single(&ex.text_a, cfg.max_len),
            vocab.encode_single(b, cfg.max_len),
        )),
        (_, Some(b)) => Ok(ModelInput::Joint(vocab.encode_pair(
            &ex.text_a,
            b,
            cfg.max_len,
        ))),
        (_, None) => Ok(ModelInput::Joint(
            vocab.encode_single(&ex.text_a, cfg.max_len),
        )),
    }
}

/// Encodes and pools one example.
pub fn build_pooled(
    g: &mut Graph,
    p: &[NodeId],
    cfg: &EncoderConfig,
    input: &ModelInput,
    mut rng: Option<&mut Rng>,
) -> Result<NodeId> {
    match input {
        ModelInput::Joint(ids) => {
            let valid = vec![true; ids.len()];
            let h = encode_graph(g, p, cfg, ids, &valid, rng)?;
            pool_graph(g, p, cfg, &[(h, &valid)])
        }
        ModelInput::Pair(a, b) => {
            let va = vec![true; a.len()];
            let vb = vec![true; b.len()];
            let ha = encode_graph(g, p, cfg, a, &va, rng.as_deref_mut())?;
            let hb = encode_graph(g, p, cfg, b, &vb, rng)?;
            pool_graph(g, p, cfg, &[(ha, &va), (hb, &vb)])
        }
    }
}

/// Positions whose logits predict the following token.
pub fn causal_lm_positions(len: usize) -> Vec<usize> {
    (0..len.saturating_sub(1)).collect()
}

/// One LM training sequence: the (possibly masked) input, the positions
/// read out through the LM head, and the token each should predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmExample {
    pub input: Vec<usize>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Masked LM replaces 15% (at least one) of the non-special positions with
/// `[MASK]`; causal LM predicts every next token.
pub fn lm_example(cfg: &EncoderConfig, ids: &[usize], rng: &mut Rng) -> LmExample {
    match cfg.objective_style {
        ObjectiveStyle::CausalLm => {
            let positions = causal_lm_positions(ids.len());
            let targets = positions.iter().map(|&i| ids[i + 1]).collect();
            LmExample {
                input: ids.to_vec(),
                positions,
                targets,
            }
        }
        ObjectiveStyle::MaskedLm => {
            let candidates: Vec<usize> = ids
                .iter()
                .enumerate()
                .filter(|(_, &id)| id != CLS_ID && id != SEP_ID && id != PAD_ID)
                .map(|(i, _)| i)
                .collect();
            if candidates.is_empty() {
                return LmExample {
                    input: ids.to_vec(),
                    positions: Vec::new(),
                    targets: Vec::new(),
                };
            }
            let k = ((candidates.len() as f64 * MLM_RATE).round() as usize).max(1);
            let mut positions: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), k)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            positions.sort_unstable();
            let targets = positions.iter().map(|&i| ids[i]).collect();
            let mut input = ids.to_vec();
            for &i in &positions {
                input[i] = MASK_ID;
            }
            LmExample {
                input,
                positions,
                targets,
            }
        }
    }
}

fn lm_head(
    g: &mut Graph,
    p: &[NodeId],
    cfg: &EncoderConfig,
    hidden: NodeId,
    positions: &[usize],
) -> Result<NodeId> {
    let rows = g.gather_rows(hidden, positions)?;
    let fb = final_base(cfg);
    linear(g, rows, p[fb + slot::LM_W], p[fb + slot::LM_B])
}

/// Mean cross-entropy over every predicted position of a batch, or `None`
/// when the batch has nothing to predict.
pub fn build_lm_loss(
    g: &mut Graph,
    p: &[NodeId],
    cfg: &EncoderConfig,
    batch: &[LmExample],
    mut rng: Option<&mut Rng>,
) -> Result<Option<NodeId>> {
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for ex in batch.iter().filter(|e| !e.positions.is_empty()) {
        let valid = vec![true; ex.input.len()];
        let h = encode_graph(g, p, cfg, &ex.input, &valid, rng.as_deref_mut())?;
        logits.push(lm_head(g, p, cfg, h, &ex.positions)?);
        targets.extend_from_slice(&ex.targets);
    }
    if logits.is_empty() {
        return Ok(None);
    }
    let all = if logits.len() == 1 {
        logits[0]
    } else {
        g.concat(&logits, Axis::Rows)?
    };
    Ok(Some(g.cross_entropy(all, &targets)?))
}

/// Hidden states of one sequence at evaluation time (no dropout).
pub fn encode(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    ids: &[usize],
    valid: &[bool],
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = bind_params(&mut g, params, false);
    let h = encode_graph(&mut g, &p, cfg, ids, valid, None)?;
    Ok(g.value(h).clone())
}

/// Pools precomputed hidden states; see [`pool_graph`].
pub fn pool(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    segments: &[(&Tensor, &[bool])],
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = bind_params(&mut g, params, false);
    let nodes: Vec<(NodeId, &[bool])> = segments
        .iter()
        .map(|(h, v)| (g.input((*h).clone()), *v))
        .collect();
    let out = pool_graph(&mut g, &p, cfg, &nodes)?;
    Ok(g.value(out).clone())
}

/// LM-head logits (`positions x vocab_size`) read from hidden states;
/// `None` when no position is requested.
pub fn lm_logits(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    hidden: &Tensor,
    positions: &[usize],
) -> Result<Option<Tensor>> {
    if let Some(&bad) = positions.iter().find(|&&i| i >= hidden.rows()) {
        return Err(Error::OutOfRange {
            what: "LM position",
            index: bad,
            limit: hidden.rows(),
        });
    }
    if positions.is_empty() {
        return Ok(None);
    }
    let mut g = Graph::new();
    let p = bind_params(&mut g, params, false);
    let h = g.input(hidden.clone());
    let out = lm_head(&mut g, &p, cfg, h, positions)?;
    Ok(Some(g.value(out).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::encoder::init_params;
    use crate::rng::seeded;

    fn cfg(style: ObjectiveStyle, pooling: Pooling) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            max_len: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            dropout_rate: 0.0,
            pooling,
            objective_style: style,
        }
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn padding_never_reaches_real_positions() {
        for style in [ObjectiveStyle::MaskedLm, ObjectiveStyle::CausalLm] {
            let c = cfg(style, Pooling::LastToken);
            let p = init_params(&c, 3).unwrap();
            let ids = [CLS_ID, 7, 9, 11, SEP_ID];
            let h = encode(&p, &c, &ids, &[true; 5]).unwrap();
            for pad in 1..5 {
                let mut padded = ids.to_vec();
                padded.extend(std::iter::repeat_n(PAD_ID, pad));
                let mut valid = vec![true; 5];
                valid.extend(std::iter::repeat_n(false, pad));
                let hp = encode(&p, &c, &padded, &valid).unwrap();
                assert!(max_diff(h.data(), &hp.data()[..h.len()]) <= 1e-9);
                for pooling in [Pooling::ClsToken, Pooling::LastToken] {
                    let pc = EncoderConfig {
                        pooling,
                        ..c.clone()
                    };
                    let a = pool(&p, &pc, &[(&h, &[true; 5])]).unwrap();
                    let b = pool(&p, &pc, &[(&hp, &valid)]).unwrap();
                    assert!(max_diff(a.data(), b.data()) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn causal_prefix_ignores_later_tokens() {
        let c = cfg(ObjectiveStyle::CausalLm, Pooling::LastToken);
        let p = init_params(&c, 4).unwrap();
        let a = encode(&p, &c, &[CLS_ID, 5, 6, 7, 8], &[true; 5]).unwrap();
        let b = encode(&p, &c, &[CLS_ID, 5, 6, 12, 8], &[true; 5]).unwrap();
        assert_eq!(&a.data()[..3 * 8], &b.data()[..3 * 8]);
        assert_ne!(&a.data()[3 * 8..], &b.data()[3 * 8..]);
    }

    #[test]
    fn masked_lm_change_reaches_every_position() {
        let c = cfg(ObjectiveStyle::MaskedLm, Pooling::ClsToken);
        let p = init_params(&c, 4).unwrap();
        let a = encode(&p, &c, &[CLS_ID, 5, 6, 7, 8], &[true; 5]).unwrap();
        let b = encode(&p, &c, &[CLS_ID, 5, 6, 7, 12], &[true; 5]).unwrap();
        for r in 0..5 {
            assert_ne!(a.row(r), b.row(r), "row {r}");
        }
    }

    #[test]
    fn causal_gradient_to_future_embeddings_is_zero() {
        let c = cfg(ObjectiveStyle::CausalLm, Pooling::LastToken);
        let params = init_params(&c, 5).unwrap();
        let ids = [CLS_ID, 5, 6, 7, 8, 9];
        for i in 0..ids.len() {
            let mut g = Graph::new();
            let mut p = bind_params(&mut g, &params, false);
            // route the token embeddings through a per-position parameter
            let rows = g.param(
                Tensor::new(vec![ids.len(), 8], {
                    let t = &params.tensors()[TOK_EMB];
                    ids.iter().flat_map(|&id| t.row(id).to_vec()).collect()
                })
                .unwrap(),
            );
            let identity: Vec<usize> = (0..ids.len()).collect();
            p[TOK_EMB] = rows;
            let h = encode_graph(&mut g, &p, &c, &identity, &[true; 6], None).unwrap();
            let out = lm_head(&mut g, &p, &c, h, &[i]).unwrap();
            let loss = g.cross_entropy(out, &[3]).unwrap();
            let grads = g.backward(loss).unwrap();
            let gr = grads.get(rows).unwrap();
            for j in 0..ids.len() {
                let norm: f64 = gr.row(j).iter().map(|x| x.abs()).sum();
                if j > i {
                    assert_eq!(norm, 0.0, "loss at {i}, position {j}");
                } else {
                    assert!(norm > 0.0, "loss at {i}, position {j}");
                }
            }
        }
    }

    #[test]
    fn siamese_identical_segments() {
        let c = cfg(ObjectiveStyle::MaskedLm, Pooling::SiamesePair);
        let p = init_params(&c, 6).unwrap();
        let h = encode(&p, &c, &[CLS_ID, 5, 6, SEP_ID], &[true; 4]).unwrap();
        let v = [true; 4];
        let out = pool(&p, &c, &[(&h, &v), (&h, &v)]).unwrap();
        let d = 8;
        assert_eq!(out.len(), 4 * d);
        let u = &out.data()[..d];
        assert!(out.data()[2 * d..3 * d].iter().all(|&x| x == 0.0));
        for (x, sq) in u.iter().zip(&out.data()[3 * d..]) {
            assert_eq!(x * x, *sq);
        }
        assert!(pool(&p, &c, &[(&h, &v)]).is_err());
    }

    #[test]
    fn cls_pooling_is_first_row() {
        let c = cfg(ObjectiveStyle::MaskedLm, Pooling::ClsToken);
        let p = init_params(&c, 6).unwrap();
        let h = encode(&p, &c, &[CLS_ID, 5, 6, SEP_ID], &[true; 4]).unwrap();
        assert_eq!(pool(&p, &c, &[(&h, &[true; 4])]).unwrap().data(), h.row(0));
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        let c = cfg(ObjectiveStyle::MaskedLm, Pooling::ClsToken);
        let p = init_params(&c, 6).unwrap();
        assert!(matches!(
            encode(&p, &c, &[CLS_ID, 99], &[true; 2]),
            Err(Error::OutOfRange {
                what: "token id",
                ..
            })
        ));
        assert!(encode(&p, &c, &[5; 13], &[true; 13]).is_err());
        let h = encode(&p, &c, &[CLS_ID, 5], &[true; 2]).unwrap();
        assert!(lm_logits(&p, &c, &h, &[2]).is_err());
    }

    #[test]
    fn lm_logits_rows_are_distributions() {
        let c = cfg(ObjectiveStyle::CausalLm, Pooling::LastToken);
        let p = init_params(&c, 6).unwrap();
        let h = encode(&p, &c, &[CLS_ID, 5, 6], &[true; 3]).unwrap();
        let logits = lm_logits(&p, &c, &h, &causal_lm_positions(3))
            .unwrap()
            .unwrap();
        assert_eq!(logits.shape(), &[2, 20]);
        let mut g = Graph::new();
        let x = g.input(logits);
        let s = g.softmax(x);
        for r in 0..2 {
            assert!((g.value(s).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let h1 = encode(&p, &c, &[CLS_ID], &[true]).unwrap();
        assert!(lm_logits(&p, &c, &h1, &causal_lm_positions(1))
            .unwrap()
            .is_none());
    }

    #[test]
    fn masking_picks_fifteen_percent_of_content() {
        let c = cfg(ObjectiveStyle::MaskedLm, Pooling::ClsToken);
        let ids: Vec<usize> = std::iter::once(CLS_ID)
            .chain((0..20).map(|i| 5 + i % 15))
            .chain([SEP_ID])
            .collect();
        let ex = lm_example(&c, &ids, &mut seeded(1));
        assert_eq!(ex.positions.len(), 3);
        for (&pos, &t) in ex.positions.iter().zip(&ex.targets) {
            assert_eq!(ex.input[pos], MASK_ID);
            assert_eq!(ids[pos], t);
            assert!(pos != 0 && pos != ids.len() - 1);
        }
        let short = lm_example(&c, &[CLS_ID, 7, SEP_ID], &mut seeded(1));
        assert_eq!(short.positions, vec![1]);
    }

    #[test]
    fn full_encoder_gradient_check() {
        for (style, pooling) in [
            (ObjectiveStyle::MaskedLm, Pooling::ClsToken),
            (ObjectiveStyle::CausalLm, Pooling::LastToken),
            (ObjectiveStyle::MaskedLm, Pooling::SiamesePair),
        ] {
            let c = EncoderConfig {
                vocab_size: 10,
                max_len: 6,
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                ..cfg(style, pooling)
            };
            assert!(c.param_count() <= 5000);
            let params = init_params(&c, 11).unwrap();
            // larger weights than the init scale so every path carries signal
            let mut tensors: Vec<Tensor> = params.into_tensors();
            let mut r = seeded(2);
            for t in &mut tensors {
                for x in t.data_mut() {
                    *x += r.gen_range(-0.5..0.5);
                }
            }
            let input = match pooling {
                Pooling::SiamesePair => {
                    ModelInput::Pair(vec![CLS_ID, 5, 6, SEP_ID], vec![CLS_ID, 7, SEP_ID])
                }
                _ => ModelInput::Joint(vec![CLS_ID, 5, 6, SEP_ID, 7, SEP_ID]),
            };
            let report = grad_check(
                |g, p| {
                    let pooled = build_pooled(g, p, &c, &input, None)?;
                    let lm = LmExample {
                        input: vec![CLS_ID, MASK_ID, 8, SEP_ID],
                        positions: vec![1, 2],
                        targets: vec![5, 9],
                    };
                    let lm_loss = build_lm_loss(g, p, &c, &[lm], None)?.unwrap();
                    let sq = g.mul(pooled, pooled)?;
                    let task = g.mean(sq);
                    let both = g.add(task, lm_loss)?;
                    Ok(both)
                },
                &tensors,
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_relative_error < 1e-5,
                "{style:?}/{pooling:?}: {report:?}"
            );
        }
    }
}
