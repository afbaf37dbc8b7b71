//! Dot-product intent scoring shared by DIET and the embedding baseline.

use rand::seq::index;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, Tensor};
use crate::nn::dot;

/// Raw dot products between an utterance vector and every label row.
pub fn similarity_scores(cls_vec: &[f64], label_table: &Tensor) -> Vec<f64> {
    (0..label_table.rows())
        .map(|i| dot(cls_vec, label_table.row(i)))
        .collect()
}

pub fn confidences(scores: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    softmax(&scaled)
}

/// `k` distinct labels drawn uniformly from all labels except `gold`.
pub fn sample_negatives(n_labels: usize, gold: usize, k: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let k = k.min(n_labels - 1);
    index::sample(rng, n_labels - 1, k)
        .into_iter()
        .map(|i| if i >= gold { i + 1 } else { i })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CandidateLoss {
    pub loss: f64,
    pub d_cls: Vec<f64>,
    /// Gradient for each candidate label row.
    pub d_rows: Vec<(usize, Vec<f64>)>,
}

/// Softmax cross-entropy over the candidate set, gold label first.
pub fn candidate_loss(cls_vec: &[f64], label_table: &Tensor, candidates: &[usize], temperature: f64) -> CandidateLoss {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&c| dot(cls_vec, label_table.row(c)) / temperature)
        .collect();
    let logp = log_softmax(&scores);
    let loss = -logp[0];
    let mut d_cls = vec![0.0; cls_vec.len()];
    let mut d_rows = Vec::with_capacity(candidates.len());
    for (ci, &c) in candidates.iter().enumerate() {
        let g = (logp[ci].exp() - if ci == 0 { 1.0 } else { 0.0 }) / temperature;
        let row = label_table.row(c);
        for (d, r) in d_cls.iter_mut().zip(row) {
            *d += g * r;
        }
        d_rows.push((c, cls_vec.iter().map(|x| g * x).collect()));
    }
    CandidateLoss { loss, d_cls, d_rows }
}

/// Negative-sampling dot-product loss: cross-entropy of the gold label
/// against `n_negatives` sampled labels.
pub fn negative_sampling_loss(
    cls_vec: &[f64],
    label_table: &Tensor,
    gold: usize,
    n_negatives: usize,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<CandidateLoss> {
    let n = label_table.rows();
    if n < 2 {
        return Err(Error::Config("need at least two intents to sample negatives".into()));
    }
    if gold >= n {
        return Err(Error::Config(format!("gold label {gold} outside inventory of {n}")));
    }
    let mut candidates = vec![gold];
    candidates.extend(sample_negatives(n, gold, n_negatives, rng));
    Ok(candidate_loss(cls_vec, label_table, &candidates, temperature))
}
