use std::collections::HashSet;

use super::sweep::RestartOptions;
use crate::datakit::{
    build_vocab, desk_corpus, gen_fake_sentences, gen_synthetic_pair_tasks, load_tsv, ColumnMap,
    Dataset, Relatedness, Vocab,
};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::pipeline::{lm_corpus, pretrain_lm, PhaseOutcome, RegimePlan, RunContext};
use crate::store::{load_checkpoint_for, Manifest, TaskSource};

/// Datasets produced by one task source.
pub fn materialize(source: &TaskSource) -> Result<Vec<Dataset>> {
    match source {
        TaskSource::Synth {
            grammar_seed,
            config,
        } => {
            let (related, target) =
                gen_synthetic_pair_tasks(*grammar_seed, Relatedness::Related, config)?;
            let (unrelated, _) =
                gen_synthetic_pair_tasks(*grammar_seed, Relatedness::Unrelated, config)?;
            Ok(vec![related, unrelated, target])
        }
        TaskSource::Fake {
            name,
            corpus_sentences,
            corpus_seed,
            train,
            dev,
            seed,
        } => {
            let corpus = desk_corpus(*corpus_sentences, *corpus_seed);
            let mut data = gen_fake_sentences(&corpus, *train, *dev, *seed)?.dataset;
            data.task.name = name.clone();
            Ok(vec![data])
        }
        TaskSource::Tsv {
            task,
            train,
            dev,
            columns,
        } => {
            let cols = columns
                .clone()
                .unwrap_or_else(|| ColumnMap::standard(task.arity));
            let data = Dataset {
                task: task.clone(),
                train: load_tsv(train, task, &cols, "train")?,
                dev: load_tsv(dev, task, &cols, "dev")?,
                test: Vec::new(),
            };
            data.validate()?;
            Ok(vec![data])
        }
    }
}

/// Every training sentence (`a` then `b`) in dataset order, up to `limit`.
pub fn pretrain_corpus(datasets: &[Dataset], limit: usize) -> Vec<Vec<String>> {
    datasets
        .iter()
        .flat_map(|d| &d.train)
        .flat_map(|e| std::iter::once(&e.text_a).chain(e.text_b.as_ref()))
        .take(limit)
        .cloned()
        .collect()
}

/// A manifest's data, vocabulary and pretrained encoder, ready to run plans.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub manifest: Manifest,
    pub hash: String,
    /// The manifest's encoder config with `vocab_size` resolved.
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub datasets: Vec<Dataset>,
    pub pretrained: EncoderParams,
    /// `None` when the encoder came from a checkpoint.
    pub pretrain_outcome: Option<PhaseOutcome>,
}

impl Experiment {
    /// Loads the tasks and builds (or loads) the vocabulary.
    pub fn data(manifest: &Manifest) -> Result<(Vec<Dataset>, Vocab, EncoderConfig)> {
        let mut datasets = Vec::new();
        for source in &manifest.tasks {
            datasets.extend(materialize(source)?);
        }
        let mut names = HashSet::new();
        if let Some(d) = datasets.iter().find(|d| !names.insert(d.task.name.clone())) {
            return Err(Error::Config(format!(
                "task {} is declared twice",
                d.task.name
            )));
        }
        let vocab = match &manifest.vocab.path {
            Some(p) => Vocab::load(p)?,
            None => build_vocab(
                datasets
                    .iter()
                    .flat_map(|d| &d.train)
                    .flat_map(|e| std::iter::once(e.text_a.as_slice()).chain(e.text_b.as_deref())),
                manifest.vocab.max_size,
            )?,
        };
        let mut config = manifest.encoder.clone();
        if config.vocab_size == 0 {
            config.vocab_size = vocab.len();
        } else if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} but the vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        Ok((datasets, vocab, config))
    }

    pub fn prepare(manifest: Manifest) -> Result<Self> {
        manifest.validate()?;
        let (datasets, vocab, config) = Self::data(&manifest)?;
        let (pretrained, pretrain_outcome) = match &manifest.pretrain.checkpoint {
            Some(path) => (load_checkpoint_for(path, &config)?.params, None),
            None => {
                let sentences = pretrain_corpus(&datasets, manifest.pretrain.sentences);
                let corpus = lm_corpus(&vocab, &config, &sentences);
                let (p, o) = pretrain_lm(&config, &corpus, &manifest.pretrain.phase)?;
                (p, Some(o))
            }
        };
        Ok(Self {
            hash: manifest.hash(),
            manifest,
            config,
            vocab,
            datasets,
            pretrained,
            pretrain_outcome,
        })
    }

    pub fn ctx(&self) -> RunContext<'_> {
        RunContext {
            config: &self.config,
            vocab: &self.vocab,
            pretrained: &self.pretrained,
            datasets: &self.datasets,
        }
    }

    fn task(&self, name: &str) -> Result<&crate::datakit::TaskSpec> {
        self.ctx().dataset(name).map(|d| &d.task)
    }

    /// The manifest's plans with task specs resolved and the manifest cap
    /// applied to every target phase.
    pub fn plans(&self) -> Result<Vec<RegimePlan>> {
        self.manifest
            .plans
            .iter()
            .map(|p| {
                let mut target_phase = p.target_phase.clone();
                if self.manifest.cap.is_some() {
                    target_phase.train_cap = self.manifest.cap;
                }
                let plan = RegimePlan {
                    regime: p.regime,
                    intermediate: p
                        .intermediate
                        .as_deref()
                        .map(|n| self.task(n).cloned())
                        .transpose()?,
                    target: self.task(&p.target)?.clone(),
                    intermediate_phase: p.intermediate_phase.clone(),
                    target_phase,
                };
                plan.validate()?;
                Ok(plan)
            })
            .collect()
    }

    pub fn restart_options(&self, workers: usize) -> RestartOptions {
        RestartOptions {
            workers,
            epsilon: self.manifest.epsilon,
            manifest_hash: self.hash.clone(),
        }
    }
}
