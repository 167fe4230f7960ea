use std::time::Instant;

use rand::seq::SliceRandom;

use super::sampler::ProportionalSampler;
use super::{Objective, PhaseConfig};
use crate::autodiff::{lr_schedule, AdamState, Axis, Graph, NodeId, Tensor};
use crate::datakit::{downsample, Dataset, Example, Label, TaskSpec, Vocab};
use crate::encoder::{
    build_lm_loss, build_pooled, init_params, lm_example, model_input, EncoderConfig,
    EncoderParams, Head, HeadKind, LmExample, ModelInput,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Predictions};
use crate::rng::{derive_seed, seeded, tags, Rng};

/// Optimizer and head state observed when a phase begins.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStart {
    pub optimizer_step: u64,
    pub moments_zero: bool,
    /// Seed of each freshly initialized head, in task order.
    pub head_seeds: Vec<u64>,
    /// Initial weights of each head.
    pub head_weights: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOutcome {
    pub name: String,
    pub start: PhaseStart,
    pub steps: usize,
    pub train_sizes: Vec<usize>,
    /// Batches drawn from each task.
    pub task_draws: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    /// Dev scores of the evaluated task after each epoch.
    pub dev_trace: Vec<Vec<f64>>,
    pub seconds: f64,
}

/// Parameters and head after a phase; the input parameters are never modified.
#[derive(Clone, Debug)]
pub struct PhaseResult {
    pub params: EncoderParams,
    pub head: Head,
    pub outcome: PhaseOutcome,
}

pub fn encode_examples(
    vocab: &Vocab,
    cfg: &EncoderConfig,
    examples: &[Example],
) -> Result<Vec<ModelInput>> {
    examples
        .iter()
        .map(|e| model_input(vocab, cfg, e))
        .collect()
}

/// `[CLS] sentence [SEP]` ids for LM training.
pub fn lm_corpus(vocab: &Vocab, cfg: &EncoderConfig, sentences: &[Vec<String>]) -> Vec<Vec<usize>> {
    sentences
        .iter()
        .map(|s| vocab.encode_single(s, cfg.max_len))
        .collect()
}

/// Loss of one batch, split into its parts.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: NodeId,
    pub task: NodeId,
    pub lm: Option<NodeId>,
}

fn head_logits(g: &mut Graph, pooled: &[NodeId], w: NodeId, b: NodeId) -> Result<NodeId> {
    let x = if pooled.len() == 1 {
        pooled[0]
    } else {
        g.concat(pooled, Axis::Rows)?
    };
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn task_loss(g: &mut Graph, kind: HeadKind, logits: NodeId, labels: &[Label]) -> Result<NodeId> {
    match kind {
        HeadKind::Classification { .. } => {
            let classes: Vec<usize> = labels
                .iter()
                .map(|l| {
                    l.class()
                        .ok_or_else(|| Error::Data("real label on a classification task".into()))
                })
                .collect::<Result<_>>()?;
            g.cross_entropy(logits, &classes)
        }
        HeadKind::Regression => {
            let target =
                Tensor::matrix(labels.len(), 1, labels.iter().map(|l| l.as_f64()).collect())?;
            let t = g.input(target);
            g.mse(logits, t)
        }
    }
}

/// Task loss on `inputs`, plus `weight` times the LM loss on the same
/// sequences when the objective asks for it.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    g: &mut Graph,
    enc: &[NodeId],
    head: (NodeId, NodeId),
    kind: HeadKind,
    cfg: &EncoderConfig,
    objective: Objective,
    inputs: &[&ModelInput],
    labels: &[Label],
    mask_rng: &mut Rng,
    mut dropout: Option<&mut Rng>,
) -> Result<LossParts> {
    let mut pooled = Vec::with_capacity(inputs.len());
    for input in inputs {
        pooled.push(build_pooled(g, enc, cfg, input, dropout.as_deref_mut())?);
    }
    let logits = head_logits(g, &pooled, head.0, head.1)?;
    let task = task_loss(g, kind, logits, labels)?;
    match objective {
        Objective::TaskOnly => Ok(LossParts {
            total: task,
            task,
            lm: None,
        }),
        Objective::TaskPlusAuxLm { weight } => {
            let lm_batch: Vec<LmExample> = inputs
                .iter()
                .map(|i| lm_example(cfg, i.primary(), mask_rng))
                .collect();
            match build_lm_loss(g, enc, cfg, &lm_batch, dropout)? {
                Some(lm) => {
                    let scaled = g.scale(lm, weight);
                    let total = g.add(task, scaled)?;
                    Ok(LossParts {
                        total,
                        task,
                        lm: Some(lm),
                    })
                }
                None => Ok(LossParts {
                    total: task,
                    task,
                    lm: None,
                }),
            }
        }
        Objective::LmOnly => Err(Error::Config("LM-only objective has no task loss".into())),
    }
}

/// Predictions of `head` over `inputs` (no dropout).
pub fn predict(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    head: &Head,
    inputs: &[ModelInput],
) -> Result<Predictions> {
    predict_flat(
        params.tensors(),
        &head.weight,
        &head.bias,
        head.kind,
        cfg,
        inputs,
    )
}

const EVAL_CHUNK: usize = 64;

fn predict_flat(
    enc: &[Tensor],
    w: &Tensor,
    b: &Tensor,
    kind: HeadKind,
    cfg: &EncoderConfig,
    inputs: &[ModelInput],
) -> Result<Predictions> {
    let mut classes = Vec::new();
    let mut reals = Vec::new();
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let p: Vec<NodeId> = enc.iter().map(|t| g.input(t.clone())).collect();
        let (wn, bn) = (g.input(w.clone()), g.input(b.clone()));
        let mut pooled = Vec::with_capacity(chunk.len());
        for input in chunk {
            pooled.push(build_pooled(&mut g, &p, cfg, input, None)?);
        }
        let logits = head_logits(&mut g, &pooled, wn, bn)?;
        let out = g.value(logits);
        if !out.is_finite() {
            return Err(Error::NonFinite("model outputs".into()));
        }
        match kind {
            HeadKind::Classification { .. } => {
                for r in 0..out.rows() {
                    let row = out.row(r);
                    // first maximum wins ties
                    let best =
                        (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
                    classes.push(best);
                }
            }
            HeadKind::Regression => reals.extend_from_slice(out.data()),
        }
    }
    Ok(match kind {
        HeadKind::Classification { .. } => Predictions::Classes(classes),
        HeadKind::Regression => Predictions::Reals(reals),
    })
}

/// Dev-set scores of a trained model on `task`.
pub fn evaluate_model(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    head: &Head,
    task: &TaskSpec,
    inputs: &[ModelInput],
    golds: &[Label],
) -> Result<Vec<f64>> {
    evaluate(task, &predict(params, cfg, head, inputs)?, golds)
}

/// Mean LM loss over `corpus` with masks drawn from `seed`.
pub fn lm_eval_loss(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    corpus: &[Vec<usize>],
    seed: u64,
) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in corpus.chunks(EVAL_CHUNK) {
        let batch: Vec<LmExample> = chunk
            .iter()
            .map(|ids| lm_example(cfg, ids, &mut rng))
            .collect();
        let n: usize = batch.iter().map(|b| b.positions.len()).sum();
        let mut g = Graph::new();
        let p: Vec<NodeId> = params
            .tensors()
            .iter()
            .map(|t| g.input(t.clone()))
            .collect();
        if let Some(loss) = build_lm_loss(&mut g, &p, cfg, &batch, None)? {
            total += g.value(loss).item() * n as f64;
            count += n;
        }
    }
    if count == 0 {
        return Err(Error::Data("corpus has no LM-predictable position".into()));
    }
    Ok(total / count as f64)
}

/// Walks a shuffled permutation batch by batch, reshuffling when exhausted.
struct EpochCursor {
    order: Vec<usize>,
    pos: usize,
}

impl EpochCursor {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next_batch(&mut self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

pub(crate) struct TaskSource {
    pub inputs: Vec<ModelInput>,
    pub labels: Vec<Label>,
}

pub(crate) struct DevSet<'a> {
    pub task: &'a TaskSpec,
    /// Index of the head scored on this set.
    pub head: usize,
    pub inputs: Vec<ModelInput>,
    pub labels: Vec<Label>,
}

pub(crate) enum Work<'a> {
    Lm(&'a [Vec<usize>]),
    Tasks(Vec<TaskSource>),
}

impl Work<'_> {
    fn sizes(&self) -> Vec<usize> {
        match self {
            Work::Lm(c) => vec![c.len()],
            Work::Tasks(s) => s.iter().map(|s| s.inputs.len()).collect(),
        }
    }
}

/// One training phase with a fresh optimizer over the encoder and `heads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train(
    name: &str,
    cfg: &EncoderConfig,
    params: &mut EncoderParams,
    heads: &mut [Head],
    head_seeds: Vec<u64>,
    work: &Work<'_>,
    dev: Option<&DevSet<'_>>,
    phase: &PhaseConfig,
) -> Result<PhaseOutcome> {
    phase.validate()?;
    let started = Instant::now();
    let sizes = work.sizes();
    if sizes.contains(&0) {
        return Err(Error::Data(format!("{name}: empty training split")));
    }
    if let Work::Tasks(sources) = work {
        if sources.len() != heads.len() {
            return Err(Error::Config(format!("{name}: one head per task required")));
        }
    }

    let n_enc = params.tensors().len();
    let mut flat: Vec<Tensor> = params.tensors().to_vec();
    for h in heads.iter() {
        flat.push(h.weight.clone());
        flat.push(h.bias.clone());
    }
    let mut adam = AdamState::new(&flat, phase.adam);
    let start = PhaseStart {
        optimizer_step: adam.step(),
        moments_zero: adam.moments_are_zero(),
        head_seeds,
        head_weights: heads.iter().map(|h| h.weight.clone()).collect(),
    };

    let mut order_rng = seeded(derive_seed(phase.seed, tags::BATCH_ORDER));
    let mut dropout_rng = seeded(derive_seed(phase.seed, tags::DROPOUT));
    let mut mask_rng = seeded(derive_seed(phase.seed, tags::LM_MASK));
    let mut draw_rng = seeded(derive_seed(phase.seed, tags::TASK_DRAW));
    let sampler = ProportionalSampler::new(&sizes)?;
    let mut cursors: Vec<EpochCursor> = sizes
        .iter()
        .map(|&n| EpochCursor::new(n, &mut order_rng))
        .collect();

    let per_epoch = phase.steps_per_epoch(sizes.iter().sum());
    let total = per_epoch * phase.epochs;
    let mut draws = vec![0usize; sizes.len()];
    let mut epoch_losses = Vec::with_capacity(phase.epochs);
    let mut dev_trace = Vec::with_capacity(phase.epochs);
    let use_dropout = cfg.dropout_rate > 0.0;

    for epoch in 0..phase.epochs {
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for step_in_epoch in 0..per_epoch {
            let step = epoch * per_epoch + step_in_epoch;
            let src = if sizes.len() > 1 {
                sampler.draw(&mut draw_rng)
            } else {
                0
            };
            draws[src] += 1;
            let idx = cursors[src].next_batch(phase.batch_size, &mut order_rng);

            let mut g = Graph::new();
            let nodes: Vec<NodeId> = flat.iter().map(|t| g.param(t.clone())).collect();
            let enc = &nodes[..n_enc];
            let drop = if use_dropout {
                Some(&mut dropout_rng)
            } else {
                None
            };
            let loss = match work {
                Work::Lm(corpus) => {
                    let batch: Vec<LmExample> = idx
                        .iter()
                        .map(|&i| lm_example(cfg, &corpus[i], &mut mask_rng))
                        .collect();
                    build_lm_loss(&mut g, enc, cfg, &batch, drop)?
                }
                Work::Tasks(sources) => {
                    let s = &sources[src];
                    let inputs: Vec<&ModelInput> = idx.iter().map(|&i| &s.inputs[i]).collect();
                    let labels: Vec<Label> = idx.iter().map(|&i| s.labels[i]).collect();
                    let head = (nodes[n_enc + 2 * src], nodes[n_enc + 2 * src + 1]);
                    let parts = batch_loss(
                        &mut g,
                        enc,
                        head,
                        heads[src].kind,
                        cfg,
                        phase.objective,
                        &inputs,
                        &labels,
                        &mut mask_rng,
                        drop,
                    )?;
                    Some(parts.total)
                }
            };
            let Some(loss) = loss else { continue };
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{name}: loss {value} at epoch {epoch}, step {step}"
                )));
            }
            loss_sum += value;
            loss_n += 1;
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = nodes
                .iter()
                .map(|&n| grads.take(n).expect("every parameter has a gradient"))
                .collect();
            let lr = lr_schedule(step, total, phase.base_lr, phase.warmup_fraction)?;
            adam.update(&mut flat, &grads, lr).map_err(|e| {
                Error::NonFinite(format!("{name}: epoch {epoch}, step {step}: {e}"))
            })?;
        }
        let mean = if loss_n == 0 {
            f64::NAN
        } else {
            loss_sum / loss_n as f64
        };
        log::info!("{name}: epoch {} mean loss {mean:.5}", epoch + 1);
        epoch_losses.push(mean);
        if let Some(d) = dev {
            let w = &flat[n_enc + 2 * d.head];
            let b = &flat[n_enc + 2 * d.head + 1];
            let preds = predict_flat(&flat[..n_enc], w, b, heads[d.head].kind, cfg, &d.inputs)?;
            dev_trace.push(evaluate(d.task, &preds, &d.labels)?);
        }
    }
    if matches!(work, Work::Lm(_)) && epoch_losses.len() >= 2 && epoch_losses[1] > epoch_losses[0] {
        log::warn!(
            "{name}: LM loss rose from {:.5} to {:.5} over the first two epochs",
            epoch_losses[0],
            epoch_losses[1]
        );
    }

    let mut it = flat.into_iter();
    let enc_tensors: Vec<Tensor> = it.by_ref().take(n_enc).collect();
    *params = EncoderParams::from_tensors(cfg, enc_tensors)?;
    for h in heads.iter_mut() {
        h.weight = it.next().expect("head weight");
        h.bias = it.next().expect("head bias");
    }
    Ok(PhaseOutcome {
        name: name.to_owned(),
        start,
        steps: total,
        train_sizes: sizes,
        task_draws: draws,
        epoch_losses,
        dev_trace,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains a freshly initialized encoder (seeded by `phase.seed`) on LM.
pub fn pretrain_lm(
    cfg: &EncoderConfig,
    corpus: &[Vec<usize>],
    phase: &PhaseConfig,
) -> Result<(EncoderParams, PhaseOutcome)> {
    if phase.objective != Objective::LmOnly {
        return Err(Error::Config(
            "pretraining needs the lm_only objective".into(),
        ));
    }
    let mut params = init_params(cfg, phase.seed)?;
    let outcome = train(
        "pretrain",
        cfg,
        &mut params,
        &mut [],
        Vec::new(),
        &Work::Lm(corpus),
        None,
        phase,
    )?;
    Ok((params, outcome))
}

pub(crate) fn head_seed(phase_seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(phase_seed, tags::HEAD), index as u64)
}

/// Train split after the phase's cap, drawn with `subsample_seed`.
pub(crate) fn capped_train(
    ds: &Dataset,
    cap: Option<usize>,
    subsample_seed: u64,
) -> Result<Vec<Example>> {
    match cap {
        Some(c) => downsample(&ds.train, c, subsample_seed),
        None => Ok(ds.train.clone()),
    }
}

pub(crate) fn task_source(
    vocab: &Vocab,
    cfg: &EncoderConfig,
    train: &[Example],
) -> Result<TaskSource> {
    Ok(TaskSource {
        inputs: encode_examples(vocab, cfg, train)?,
        labels: train.iter().map(|e| e.label).collect(),
    })
}

pub(crate) fn dev_set<'a>(
    vocab: &Vocab,
    cfg: &EncoderConfig,
    task: &'a TaskSpec,
    dev: &[Example],
    head: usize,
) -> Result<DevSet<'a>> {
    Ok(DevSet {
        task,
        head,
        inputs: encode_examples(vocab, cfg, dev)?,
        labels: dev.iter().map(|e| e.label).collect(),
    })
}

/// Fine-tunes a copy of `params` on one task with a fresh head and optimizer.
/// The training split is downsampled with a seed derived from `phase.seed`.
pub fn run_phase(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    vocab: &Vocab,
    data: &Dataset,
    phase: &PhaseConfig,
) -> Result<PhaseResult> {
    run_phase_on(
        params,
        cfg,
        vocab,
        data,
        phase,
        derive_seed(phase.seed, tags::SUBSAMPLE),
    )
}

pub(crate) fn run_phase_on(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    vocab: &Vocab,
    data: &Dataset,
    phase: &PhaseConfig,
    subsample_seed: u64,
) -> Result<PhaseResult> {
    if matches!(phase.objective, Objective::LmOnly) {
        return Err(Error::Config(format!(
            "{}: fine-tuning needs a task objective",
            data.task.name
        )));
    }
    let train_split = capped_train(data, phase.train_cap, subsample_seed)?;
    let source = task_source(vocab, cfg, &train_split)?;
    let dev = dev_set(vocab, cfg, &data.task, &data.dev, 0)?;
    let seed = head_seed(phase.seed, 0);
    let mut heads = vec![Head::new(&data.task, cfg.pooled_dim(), seed)];
    let mut out = params.clone();
    let outcome = train(
        &data.task.name,
        cfg,
        &mut out,
        &mut heads,
        vec![seed],
        &Work::Tasks(vec![source]),
        Some(&dev),
        phase,
    )?;
    Ok(PhaseResult {
        params: out,
        head: heads.pop().expect("one head"),
        outcome,
    })
}
