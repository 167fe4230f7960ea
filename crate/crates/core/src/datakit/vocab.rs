use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Config(format!(
                    "vocabulary must start with {SPECIALS:?}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// `[CLS] a [SEP]`, truncated to `max_len`.
    pub fn encode_single(&self, a: &[String], max_len: usize) -> Vec<usize> {
        let keep = a.len().min(max_len.saturating_sub(2));
        let mut out = Vec::with_capacity(keep + 2);
        out.push(CLS_ID);
        out.extend(a[..keep].iter().map(|t| self.id(t)));
        out.push(SEP_ID);
        out
    }

    /// `[CLS] a [SEP] b [SEP]`, trimming the longer segment first to fit `max_len`.
    pub fn encode_pair(&self, a: &[String], b: &[String], max_len: usize) -> Vec<usize> {
        let budget = max_len.saturating_sub(3);
        let (mut la, mut lb) = (a.len(), b.len());
        while la + lb > budget {
            if la >= lb {
                la -= 1;
            } else {
                lb -= 1;
            }
        }
        let mut out = Vec::with_capacity(la + lb + 3);
        out.push(CLS_ID);
        out.extend(a[..la].iter().map(|t| self.id(t)));
        out.push(SEP_ID);
        out.extend(b[..lb].iter().map(|t| self.id(t)));
        out.push(SEP_ID);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

/// Specials first, then the most frequent tokens (ties broken
/// lexicographically) until `max_size` entries.
pub fn build_vocab<'a, I>(corpora: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size < SPECIALS.len() {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} cannot hold {} special tokens",
            SPECIALS.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpora {
        for t in sentence {
            if !SPECIALS.contains(&t.as_str()) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - SPECIALS.len())
            .map(|(t, _)| t.to_owned()),
    );
    Vocab::from_tokens(tokens)
}
