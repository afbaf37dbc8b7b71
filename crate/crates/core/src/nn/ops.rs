use rand::{Rng, RngCore};

use super::Tensor;

/// Forward-pass mode. Training carries the RNG that drives dropout so that a
/// fixed seed reproduces the exact same masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = logsumexp(x);
    x.iter().map(|v| v - lse).collect()
}

/// Row-wise standardisation without the affine part.
pub fn layer_norm(x: &Tensor, eps: f64) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out
}

/// Inverted dropout. Returns the output and, in training mode, the per-element
/// scale (0 or 1/(1-p)) needed by the backward pass.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    p: f64,
    rng: &mut R,
    training: bool,
) -> (Tensor, Option<Vec<f64>>) {
    if !training || p <= 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 / (1.0 - p);
    let scale: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .zip(&scale)
        .for_each(|(v, s)| *v *= s);
    (out, Some(scale))
}

pub(crate) fn dropout_mode(x: &Tensor, p: f64, mode: &mut Mode<'_>) -> (Tensor, Option<Vec<f64>>) {
    match mode {
        Mode::Eval => (x.clone(), None),
        Mode::Train(rng) => dropout(x, p, &mut **rng, true),
    }
}

pub(crate) fn dropout_backward(dy: &mut Tensor, scale: &Option<Vec<f64>>) {
    if let Some(s) = scale {
        dy.data_mut().iter_mut().zip(s).for_each(|(g, s)| *g *= s);
    }
}
