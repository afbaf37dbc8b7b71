//! Sparse (token one-hot + character n-gram multi-hot) and dense (pretrained
//! or hashed embedding) features for each token, plus the sentence-level
//! CLS slot.

mod dense;
mod sparse;

pub use dense::{
    hash_embed, load_dense_file, normalize_key, parse_provider_spec, write_dense_file,
    write_hash_table, DenseProvider, ProviderDescriptor, ProviderKind,
};
pub use sparse::{char_ngrams, fit_sparse, SparseConfig, SparseSpec, SparseVec};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_with_offsets, Token};
use crate::error::{Error, Result};

/// Features of one utterance. Position `t < len` is a token; the CLS slot is
/// kept separately and appended by the models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub token_sparse: Vec<SparseVec>,
    pub token_dense: Option<Vec<Vec<f32>>>,
    pub cls_sparse: SparseVec,
    pub cls_dense: Option<Vec<f32>>,
    /// Character span of each token in the raw text.
    pub spans: Vec<(usize, usize)>,
}

impl FeatureBundle {
    pub fn len(&self) -> usize {
        self.token_sparse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_sparse.is_empty()
    }

    pub fn dense_dim(&self) -> usize {
        self.cls_dense.as_ref().map_or(0, Vec::len)
    }
}

/// Tokens the models see for `text`. Punctuation-only input, which the
/// tokenizer maps to nothing, falls back to one token covering the trimmed
/// text so every utterance has at least one position.
pub fn model_tokens(text: &str) -> Vec<Token> {
    let toks = tokenize_with_offsets(text);
    if !toks.is_empty() {
        return toks;
    }
    let chars: Vec<char> = text.chars().collect();
    let start = chars.iter().position(|c| !c.is_whitespace()).unwrap_or(0);
    let end = chars
        .iter()
        .rposition(|c| !c.is_whitespace())
        .map_or(chars.len(), |p| p + 1);
    vec![Token {
        text: chars[start..end].iter().collect::<String>().to_lowercase(),
        start,
        end,
    }]
}

/// Builds the feature bundle of one utterance.
///
/// Token-table and hash providers fill `token_dense` and the CLS vector is
/// their mean; sentence-table providers fill only `cls_dense`, looked up by
/// the normalized raw text (a miss is an error).
pub fn featurize(
    spec: &SparseSpec,
    provider: Option<&DenseProvider>,
    tokens: &[Token],
    raw_text: &str,
) -> Result<FeatureBundle> {
    if tokens.is_empty() {
        return Err(Error::Dataset(format!("no tokens in {raw_text:?}")));
    }
    let token_sparse: Vec<SparseVec> = tokens.iter().map(|t| spec.encode_token(&t.text)).collect();
    let cls_sparse = SparseVec::union(&token_sparse);
    let (token_dense, cls_dense) = match provider {
        None => (None, None),
        Some(p) => match p.kind() {
            ProviderKind::SentenceTable => (None, Some(p.sentence_vector(raw_text)?)),
            ProviderKind::TokenTable | ProviderKind::Hash { .. } => {
                let vecs: Vec<Vec<f32>> = tokens.iter().map(|t| p.token_vector(&t.text)).collect();
                let mut mean = vec![0f64; p.dim()];
                for v in &vecs {
                    for (m, x) in mean.iter_mut().zip(v) {
                        *m += f64::from(*x);
                    }
                }
                let n = vecs.len() as f64;
                let mean = mean.into_iter().map(|m| (m / n) as f32).collect();
                (Some(vecs), Some(mean))
            }
        },
    };
    Ok(FeatureBundle {
        token_sparse,
        token_dense,
        cls_sparse,
        cls_dense,
        spans: tokens.iter().map(|t| (t.start, t.end)).collect(),
    })
}

/// Tokenizes and featurizes raw text in one go.
pub fn featurize_text(
    spec: &SparseSpec,
    provider: Option<&DenseProvider>,
    text: &str,
) -> Result<FeatureBundle> {
    featurize(spec, provider, &model_tokens(text), text)
}
