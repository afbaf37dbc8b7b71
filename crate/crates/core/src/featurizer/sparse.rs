use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-hot vector stored as sorted, deduplicated active indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseVec(Vec<u32>);

impl SparseVec {
    pub fn from_indices(mut idx: Vec<u32>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        SparseVec(idx)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn nnz(&self) -> usize {
        self.0.len()
    }

    /// Element-wise sum clipped to 1.
    pub fn union(vs: &[SparseVec]) -> SparseVec {
        let set: BTreeSet<u32> = vs.iter().flat_map(|v| v.0.iter().copied()).collect();
        SparseVec(set.into_iter().collect())
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &i in &self.0 {
            out[i as usize] = 1.0;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseConfig {
    pub ngram_range: (usize, usize),
    pub min_freq: usize,
    pub oov_bucket: bool,
}

impl Default for SparseConfig {
    fn default() -> Self {
        SparseConfig {
            ngram_range: (1, 4),
            min_freq: 1,
            oov_bucket: true,
        }
    }
}

/// Vocabulary of the sparse feature space. Token indices come first, then
/// n-gram indices, then the optional OOV bucket; all assigned in
/// lexicographic order so fitting is deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSpec {
    token_vocab: BTreeMap<String, u32>,
    ngram_vocab: BTreeMap<String, u32>,
    ngram_range: (usize, usize),
    oov_bucket: bool,
}

/// All contiguous char substrings of lengths `n_min..=n_max` of the
/// lowercased token, with repetitions, shortest first.
pub fn char_ngrams(token: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let chars: Vec<char> = token.to_lowercase().chars().collect();
    let mut out = Vec::new();
    for n in n_min.max(1)..=n_max {
        if n > chars.len() {
            break;
        }
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// Fits the sparse vocabulary on tokenized training texts. An n-gram's
/// frequency counts the token occurrences containing it.
pub fn fit_sparse(train_texts: &[Vec<String>], cfg: &SparseConfig) -> Result<SparseSpec> {
    let (n_min, n_max) = cfg.ngram_range;
    if n_min < 1 || n_max < n_min {
        return Err(Error::Config(format!("invalid n-gram range ({n_min}, {n_max})")));
    }
    if train_texts.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let mut token_freq: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ngram_freq: BTreeMap<String, usize> = BTreeMap::new();
    for tok in train_texts.iter().flatten() {
        *token_freq.entry(tok.as_str()).or_insert(0) += 1;
        let grams: BTreeSet<String> = char_ngrams(tok, n_min, n_max).into_iter().collect();
        for g in grams {
            *ngram_freq.entry(g).or_insert(0) += 1;
        }
    }
    let mut next = 0u32;
    let mut token_vocab = BTreeMap::new();
    for (t, f) in token_freq {
        if f >= cfg.min_freq {
            token_vocab.insert(t.to_string(), next);
            next += 1;
        }
    }
    let mut ngram_vocab = BTreeMap::new();
    for (g, f) in ngram_freq {
        if f >= cfg.min_freq {
            ngram_vocab.insert(g, next);
            next += 1;
        }
    }
    Ok(SparseSpec {
        token_vocab,
        ngram_vocab,
        ngram_range: cfg.ngram_range,
        oov_bucket: cfg.oov_bucket,
    })
}

impl SparseSpec {
    pub fn dim(&self) -> usize {
        self.token_vocab.len() + self.ngram_vocab.len() + usize::from(self.oov_bucket)
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        self.ngram_range
    }

    pub fn token_vocab(&self) -> &BTreeMap<String, u32> {
        &self.token_vocab
    }

    pub fn ngram_vocab(&self) -> &BTreeMap<String, u32> {
        &self.ngram_vocab
    }

    pub fn token_index(&self, token: &str) -> Option<u32> {
        self.token_vocab.get(token).copied()
    }

    pub fn ngram_index(&self, gram: &str) -> Option<u32> {
        self.ngram_vocab.get(gram).copied()
    }

    pub fn oov_index(&self) -> Option<u32> {
        self.oov_bucket
            .then(|| (self.token_vocab.len() + self.ngram_vocab.len()) as u32)
    }

    pub fn is_oov(&self, token: &str) -> bool {
        !self.token_vocab.contains_key(token)
    }

    /// Token one-hot (or the OOV bucket) plus every known n-gram of the token.
    pub fn encode_token(&self, token: &str) -> SparseVec {
        let mut idx = Vec::new();
        match self.token_index(token) {
            Some(i) => idx.push(i),
            None => idx.extend(self.oov_index()),
        }
        let (n_min, n_max) = self.ngram_range;
        for g in char_ngrams(token, n_min, n_max) {
            if let Some(i) = self.ngram_index(&g) {
                idx.push(i);
            }
        }
        SparseVec::from_indices(idx)
    }
}
