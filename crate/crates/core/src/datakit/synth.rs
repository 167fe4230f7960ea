//! Synthetic sentence-pair tasks with controllable relatedness.
//!
//! Every content word carries a hidden polarity (+1 or -1) fixed by the
//! grammar seed. The target task labels a pair `(a, b)` positive when the
//! polarity sum over both sentences is positive. The `related` intermediate
//! task draws pairs from a different length distribution over the same
//! lexicon and labels them by the polarity of `a` alone, so it exercises the
//! same word-level features. The `unrelated` intermediate task labels pairs
//! by the parity of their combined length, which carries no polarity
//! information.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::task::{Arity, Dataset, Example, Label, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

pub const POSITIVE: usize = 1;
pub const NEGATIVE: usize = 0;

const MAX_DRAWS_PER_EXAMPLE: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relatedness {
    Related,
    Unrelated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Content words in the shared lexicon; half of them are positive.
    pub content_vocab: usize,
    pub a_len_min: usize,
    pub a_len_max: usize,
    pub b_len_min: usize,
    pub b_len_max: usize,
    /// Sentence lengths of the related intermediate task.
    pub intermediate_a_len_min: usize,
    pub intermediate_a_len_max: usize,
    pub intermediate_train: usize,
    pub target_train: usize,
    pub dev: usize,
    /// Fraction of examples carrying label 1.
    pub balance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            content_vocab: 24,
            a_len_min: 3,
            a_len_max: 6,
            b_len_min: 2,
            b_len_max: 4,
            intermediate_a_len_min: 5,
            intermediate_a_len_max: 8,
            intermediate_train: 3000,
            target_train: 2000,
            dev: 500,
            balance: 0.5,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.content_vocab >= 2
            && self.a_len_min >= 1
            && self.a_len_min <= self.a_len_max
            && self.b_len_min >= 1
            && self.b_len_min <= self.b_len_max
            && self.intermediate_a_len_min >= 1
            && self.intermediate_a_len_min <= self.intermediate_a_len_max
            && (0.0..=1.0).contains(&self.balance)
            && self.dev > 0
            && self.target_train > 0
            && self.intermediate_train > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "inconsistent synthetic task config {self:?}"
            )))
        }
    }
}

/// Content words and their hidden polarities.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    polarity: HashMap<String, i64>,
}

impl Lexicon {
    /// `w0..w{n-1}`, a seeded half of them positive.
    pub fn new(n: usize, seed: u64) -> Self {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let mut shuffled = words.clone();
        shuffled.shuffle(&mut seeded(seed));
        let polarity = shuffled
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w, if i < n / 2 { 1 } else { -1 }))
            .collect();
        Self { words, polarity }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// +1 or -1 for lexicon words, 0 otherwise.
    pub fn polarity(&self, word: &str) -> i64 {
        self.polarity.get(word).copied().unwrap_or(0)
    }

    pub fn sentiment(&self, tokens: &[String]) -> i64 {
        tokens.iter().map(|t| self.polarity(t)).sum()
    }
}

/// Target rule: positive iff the polarity sum over both sentences is positive.
/// `None` on a tie.
pub fn pair_sentiment_label(lex: &Lexicon, a: &[String], b: &[String]) -> Option<usize> {
    sign_label(lex.sentiment(a) + lex.sentiment(b))
}

/// Related-intermediate rule: the polarity of `a` alone.
pub fn premise_sentiment_label(lex: &Lexicon, a: &[String]) -> Option<usize> {
    sign_label(lex.sentiment(a))
}

/// Unrelated-intermediate rule: 1 iff the combined length is odd.
pub fn length_parity_label(a: &[String], b: &[String]) -> usize {
    (a.len() + b.len()) % 2
}

fn sign_label(s: i64) -> Option<usize> {
    match s.signum() {
        1 => Some(POSITIVE),
        -1 => Some(NEGATIVE),
        _ => None,
    }
}

fn sentence(lex: &Lexicon, min: usize, max: usize, rng: &mut Rng) -> Vec<String> {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| lex.words[rng.gen_range(0..lex.words.len())].clone())
        .collect()
}

/// Labels with an exact positive share of `balance`, in shuffled order.
fn balanced_labels(n: usize, balance: f64, rng: &mut Rng) -> Vec<usize> {
    let positives = (n as f64 * balance).round() as usize;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < positives)).collect();
    labels.shuffle(rng);
    labels
}

/// Draws pairs until `rule` yields each requested label.
fn split<F>(
    n: usize,
    split: &str,
    cfg: &SynthConfig,
    rng: &mut Rng,
    mut draw: impl FnMut(&mut Rng) -> (Vec<String>, Vec<String>),
    rule: F,
) -> Result<Vec<Example>>
where
    F: Fn(&[String], &[String]) -> Option<usize>,
{
    balanced_labels(n, cfg.balance, rng)
        .into_iter()
        .enumerate()
        .map(|(i, want)| {
            for _ in 0..MAX_DRAWS_PER_EXAMPLE {
                let (a, b) = draw(rng);
                if rule(&a, &b) == Some(want) {
                    return Ok(Example {
                        guid: format!("{split}-{i}"),
                        text_a: a,
                        text_b: Some(b),
                        label: Label::Class(want),
                    });
                }
            }
            Err(Error::Config(format!(
                "synthetic config cannot produce label {want}"
            )))
        })
        .collect()
}

pub fn target_task() -> TaskSpec {
    TaskSpec::binary("synth_target", Arity::Pair)
}

pub fn intermediate_task(relatedness: Relatedness) -> TaskSpec {
    match relatedness {
        Relatedness::Related => TaskSpec::binary("synth_related", Arity::Pair),
        Relatedness::Unrelated => TaskSpec::binary("synth_unrelated", Arity::Pair),
    }
}

/// Returns `(intermediate, target)`. The target dataset depends only on
/// `grammar_seed`, so related and unrelated variants share it exactly.
pub fn gen_synthetic_pair_tasks(
    grammar_seed: u64,
    relatedness: Relatedness,
    cfg: &SynthConfig,
) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let lex = Lexicon::new(cfg.content_vocab, derive_seed(grammar_seed, 100));
    let target_pair = |rng: &mut Rng| {
        (
            sentence(&lex, cfg.a_len_min, cfg.a_len_max, rng),
            sentence(&lex, cfg.b_len_min, cfg.b_len_max, rng),
        )
    };
    let target_rule = |a: &[String], b: &[String]| pair_sentiment_label(&lex, a, b);

    let mut rng = seeded(derive_seed(grammar_seed, 101));
    let target = Dataset {
        task: target_task(),
        train: split(
            cfg.target_train,
            "train",
            cfg,
            &mut rng,
            target_pair,
            target_rule,
        )?,
        dev: split(cfg.dev, "dev", cfg, &mut rng, target_pair, target_rule)?,
        test: Vec::new(),
    };

    let mut rng = seeded(derive_seed(grammar_seed, 102));
    let (train, dev) = match relatedness {
        Relatedness::Related => {
            let draw = |rng: &mut Rng| {
                (
                    sentence(
                        &lex,
                        cfg.intermediate_a_len_min,
                        cfg.intermediate_a_len_max,
                        rng,
                    ),
                    sentence(&lex, cfg.b_len_min, cfg.b_len_max, rng),
                )
            };
            let rule = |a: &[String], _: &[String]| premise_sentiment_label(&lex, a);
            (
                split(cfg.intermediate_train, "train", cfg, &mut rng, draw, rule)?,
                split(cfg.dev, "dev", cfg, &mut rng, draw, rule)?,
            )
        }
        Relatedness::Unrelated => {
            let rule = |a: &[String], b: &[String]| Some(length_parity_label(a, b));
            (
                split(
                    cfg.intermediate_train,
                    "train",
                    cfg,
                    &mut rng,
                    target_pair,
                    rule,
                )?,
                split(cfg.dev, "dev", cfg, &mut rng, target_pair, rule)?,
            )
        }
    };
    let intermediate = Dataset {
        task: intermediate_task(relatedness),
        train,
        dev,
        test: Vec::new(),
    };
    Ok((intermediate, target))
}
