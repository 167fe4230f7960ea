//! Fake-sentence detection data: real corpus sentences against copies
//! corrupted by swapping 2 to 4 pairs of words.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::task::{Arity, Dataset, Example, Label, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

/// Minimum sentence length able to host four disjoint swap pairs.
pub const MIN_FAKE_SOURCE_LEN: usize = 8;
const MAX_REROLLS: usize = 10;

pub const REAL_LABEL: usize = 0;
pub const FAKE_LABEL: usize = 1;

/// Generated data plus, per example, the index of the corpus sentence it came from.
#[derive(Clone, Debug)]
pub struct FakeSentenceData {
    pub dataset: Dataset,
    pub train_sources: Vec<usize>,
    pub dev_sources: Vec<usize>,
}

pub fn fake_task(name: &str) -> TaskSpec {
    TaskSpec::binary(name, Arity::Single)
}

/// Swaps `k` pairs among `2k` distinct uniformly chosen positions.
pub fn swap_pairs(tokens: &[String], k: usize, rng: &mut Rng) -> Vec<String> {
    let positions = rand::seq::index::sample(rng, tokens.len(), 2 * k).into_vec();
    let mut out = tokens.to_vec();
    for pair in positions.chunks(2) {
        out.swap(pair[0], pair[1]);
    }
    out
}

/// One corrupted copy, or `None` when every attempt reproduced the source.
pub fn corrupt(tokens: &[String], rng: &mut Rng) -> Option<Vec<String>> {
    for _ in 0..=MAX_REROLLS {
        let k = rng.gen_range(2..=4);
        let fake = swap_pairs(tokens, k, rng);
        if fake != tokens {
            return Some(fake);
        }
    }
    None
}

fn generate_split(
    corpus: &[Vec<String>],
    eligible: &[usize],
    n: usize,
    split: &str,
    rng: &mut Rng,
) -> Result<(Vec<Example>, Vec<usize>)> {
    let mut all: Vec<usize> = (0..corpus.len()).collect();
    all.shuffle(rng);
    let mut hosts = eligible.to_vec();
    hosts.shuffle(rng);

    let mut items: Vec<(Vec<String>, usize, usize)> = Vec::with_capacity(n);
    for i in 0..n / 2 {
        let src = all[i % all.len()];
        items.push((corpus[src].clone(), REAL_LABEL, src));
    }

    let mut cursor = 0usize;
    let mut misses_in_a_row = 0usize;
    let mut fakes = 0;
    while fakes < n / 2 {
        let src = hosts[cursor % hosts.len()];
        cursor += 1;
        match corrupt(&corpus[src], rng) {
            Some(fake) => {
                items.push((fake, FAKE_LABEL, src));
                fakes += 1;
                misses_in_a_row = 0;
            }
            None => {
                misses_in_a_row += 1;
                if misses_in_a_row >= hosts.len() {
                    return Err(Error::Data(
                        "no corpus sentence admits a swap that changes it".into(),
                    ));
                }
            }
        }
    }

    items.shuffle(rng);
    let mut sources = Vec::with_capacity(n);
    let examples = items
        .into_iter()
        .enumerate()
        .map(|(i, (text, label, src))| {
            sources.push(src);
            Example {
                guid: format!("{split}-{i}"),
                text_a: text,
                text_b: None,
                label: Label::Class(label),
            }
        })
        .collect();
    Ok((examples, sources))
}

/// Builds a balanced real/fake dataset with `n_train` and `n_dev` examples.
pub fn gen_fake_sentences(
    corpus: &[Vec<String>],
    n_train: usize,
    n_dev: usize,
    seed: u64,
) -> Result<FakeSentenceData> {
    if !n_train.is_multiple_of(2) || !n_dev.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "fake-sentence split sizes must be even, got {n_train}/{n_dev}"
        )));
    }
    let eligible: Vec<usize> = corpus
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= MIN_FAKE_SOURCE_LEN)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data(format!(
            "no corpus sentence has at least {MIN_FAKE_SOURCE_LEN} tokens"
        )));
    }
    let mut rng = seeded(derive_seed(seed, 1));
    let (train, train_sources) = generate_split(corpus, &eligible, n_train, "train", &mut rng)?;
    let mut rng = seeded(derive_seed(seed, 2));
    let (dev, dev_sources) = generate_split(corpus, &eligible, n_dev, "dev", &mut rng)?;
    Ok(FakeSentenceData {
        dataset: Dataset {
            task: fake_task("real_fake"),
            train,
            dev,
            test: Vec::new(),
        },
        train_sources,
        dev_sources,
    })
}

const SUBJECTS: &[&str] = &[
    "the old man",
    "a young woman",
    "her brother",
    "my mother",
    "the captain",
    "his dog",
    "the stranger",
    "our neighbor",
    "a tired soldier",
    "the little girl",
    "elena",
    "marcus",
    "the doctor",
    "their teacher",
    "a quiet boy",
    "the farmer",
];
const VERBS: &[&str] = &[
    "opened",
    "watched",
    "carried",
    "found",
    "closed",
    "remembered",
    "followed",
    "painted",
    "dropped",
    "noticed",
    "lifted",
    "pushed",
    "described",
    "cleaned",
    "hid",
    "studied",
];
const OBJECTS: &[&str] = &[
    "an iron key",
    "that wooden door",
    "some letters",
    "every window",
    "a broken lamp",
    "this red coat",
    "one silver coin",
    "their map",
    "its leather bag",
    "those photographs",
    "a small box",
    "her notebook",
    "two candles",
    "his violin",
    "the garden gate",
];
const PLACES: &[&str] = &[
    "near the river",
    "inside this house",
    "behind our barn",
    "under a grey sky",
    "beside her bed",
    "across that bridge",
    "in the kitchen",
    "at dawn",
    "during supper",
    "before midnight",
    "after school",
    "along some quiet road",
];
const TAILS: &[&str] = &[
    "and then smiled",
    "without saying anything",
    "while rain fell",
    "as usual",
    "because nobody else would",
    "but felt uneasy",
    "so carefully",
    "for reasons unknown",
    "with trembling hands",
    "before anyone noticed",
];

/// Synthetic book-like sentences for desk-scale pretraining and
/// fake-sentence generation.
pub fn desk_corpus(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = seeded(seed);
    let pick = |rng: &mut Rng, xs: &[&str]| xs[rng.gen_range(0..xs.len())].to_owned();
    (0..n)
        .map(|_| {
            let mut s = format!(
                "{} {} {}",
                pick(&mut rng, SUBJECTS),
                pick(&mut rng, VERBS),
                pick(&mut rng, OBJECTS)
            );
            if rng.gen_bool(0.8) {
                s.push(' ');
                s.push_str(&pick(&mut rng, PLACES));
            }
            if rng.gen_bool(0.5) {
                s.push(' ');
                s.push_str(&pick(&mut rng, TAILS));
            }
            s.push_str(" .");
            super::vocab::tokenize(&s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn multiset(xs: &[String]) -> Vec<String> {
        let mut v = xs.to_vec();
        v.sort();
        v
    }

    #[test]
    fn swapping_two_pairs_of_distinct_tokens_changes_four_positions() {
        let toks: Vec<String> = "a b c d e f g h".split(' ').map(String::from).collect();
        for seed in 0..50 {
            let fake = swap_pairs(&toks, 2, &mut seeded(seed));
            let changed = fake.iter().zip(&toks).filter(|(x, y)| x != y).count();
            assert_eq!(changed, 4);
            assert_eq!(multiset(&fake), multiset(&toks));
        }
    }

    #[test]
    fn balanced_and_multiset_preserving() {
        let corpus = desk_corpus(200, 3);
        let data = gen_fake_sentences(&corpus, 400, 40, 9).unwrap();
        let ds = &data.dataset;
        let fakes = ds
            .train
            .iter()
            .filter(|e| e.label == Label::Class(FAKE_LABEL))
            .count();
        assert_eq!(fakes, 200);
        for (ex, &src) in ds.train.iter().zip(&data.train_sources) {
            let source = &corpus[src];
            if ex.label == Label::Class(REAL_LABEL) {
                assert_eq!(&ex.text_a, source);
            } else {
                assert_eq!(multiset(&ex.text_a), multiset(source));
                assert_ne!(&ex.text_a, source);
            }
        }
        ds.validate().unwrap();
    }

    #[test]
    fn rejects_corpus_without_long_sentences() {
        let corpus = vec![vec!["a".to_string(); 3]];
        assert!(gen_fake_sentences(&corpus, 10, 2, 0).is_err());
    }

    #[test]
    fn rejects_unchangeable_corpus() {
        let corpus = vec![vec!["x".to_string(); 10]];
        assert!(gen_fake_sentences(&corpus, 10, 2, 0).is_err());
    }

    #[test]
    fn odd_size_rejected() {
        let corpus = desk_corpus(10, 0);
        assert!(gen_fake_sentences(&corpus, 11, 2, 0).is_err());
    }
}
