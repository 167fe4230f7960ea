//! Datasets: task declarations, TSV ingestion, vocabulary, and the
//! generators for fake-sentence detection and synthetic pair tasks.

mod fake;
mod sample;
mod synth;
mod task;
mod tsv;
mod vocab;

pub use fake::{
    corrupt, desk_corpus, fake_task, gen_fake_sentences, swap_pairs, FakeSentenceData, FAKE_LABEL,
    MIN_FAKE_SOURCE_LEN, REAL_LABEL,
};
pub use sample::downsample;
pub use synth::{
    gen_synthetic_pair_tasks, intermediate_task, length_parity_label, pair_sentiment_label,
    premise_sentiment_label, target_task, Lexicon, Relatedness, SynthConfig, NEGATIVE, POSITIVE,
};
pub use task::{Arity, Dataset, Example, Label, LabelKind, TaskSpec};
pub use tsv::{load_tsv, write_tsv, ColumnMap, ColumnRef};
pub use vocab::{
    build_vocab, detokenize, tokenize, Vocab, CLS, CLS_ID, MASK, MASK_ID, PAD, PAD_ID, SEP, SEP_ID,
    SPECIALS, UNK, UNK_ID,
};
