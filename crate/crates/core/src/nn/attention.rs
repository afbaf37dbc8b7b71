use rand::Rng;

use super::tensor::{axpy, dot};
use super::{HasParams, Linear, Param, Tensor};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention over `[B, L, D]` inputs.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    context: Tensor,
    /// Attention weights, laid out `[B, H, L, L]`.
    pub weights: Vec<f64>,
    mask: Vec<bool>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(&format!("{name}.query"), dim, dim, rng),
            key: Linear::new(&format!("{name}.key"), dim, dim, rng),
            value: Linear::new(&format!("{name}.value"), dim, dim, rng),
            output: Linear::new(&format!("{name}.output"), dim, dim, rng),
            heads,
        })
    }

    /// `mask[b * L + t]` is true for real positions. Masked key positions get
    /// exactly zero weight; outputs at masked query positions are computed but
    /// carry no meaning.
    pub fn forward(&self, x: &Tensor, mask: &[bool]) -> Result<(Tensor, AttentionCache)> {
        let shape = x.shape();
        if shape.len() != 3 {
            return Err(Error::Shape(format!("attention expects [B, L, D], got {shape:?}")));
        }
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        if d % self.heads != 0 {
            return Err(Error::Shape(format!("width {d} not divisible by {} heads", self.heads)));
        }
        if mask.len() != b * l {
            return Err(Error::Shape(format!("mask length {} != {}", mask.len(), b * l)));
        }
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let mut context = Tensor::zeros(shape);
        let mut weights = vec![0.0; b * self.heads * l * l];
        let mut scores = vec![0.0; l];
        for bi in 0..b {
            let valid = &mask[bi * l..(bi + 1) * l];
            for h in 0..self.heads {
                let lo = h * dh;
                for i in 0..l {
                    let qi = &q.row(bi * l + i)[lo..lo + dh];
                    let mut m = f64::NEG_INFINITY;
                    for j in 0..l {
                        if valid[j] {
                            let s = dot(qi, &k.row(bi * l + j)[lo..lo + dh]) * scale;
                            scores[j] = s;
                            m = m.max(s);
                        }
                    }
                    let w = &mut weights[((bi * self.heads + h) * l + i) * l..][..l];
                    if m == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut sum = 0.0;
                    for j in 0..l {
                        if valid[j] {
                            w[j] = (scores[j] - m).exp();
                            sum += w[j];
                        }
                    }
                    let ctx = &mut context.row_mut(bi * l + i)[lo..lo + dh];
                    for j in 0..l {
                        if valid[j] {
                            w[j] /= sum;
                            axpy(w[j], &v.row(bi * l + j)[lo..lo + dh], ctx);
                        }
                    }
                }
            }
        }
        let y = self.output.forward(&context)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                context,
                weights,
                mask: mask.to_vec(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Tensor) -> Tensor {
        let shape = cache.x.shape();
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.output.backward(&cache.context, dy);
        let mut dq = Tensor::zeros(shape);
        let mut dk = Tensor::zeros(shape);
        let mut dv = Tensor::zeros(shape);
        let mut dp = vec![0.0; l];
        for bi in 0..b {
            let valid = &cache.mask[bi * l..(bi + 1) * l];
            for h in 0..self.heads {
                let lo = h * dh;
                for i in 0..l {
                    let w = &cache.weights[((bi * self.heads + h) * l + i) * l..][..l];
                    let dci = &dctx.row(bi * l + i)[lo..lo + dh];
                    let mut wdp = 0.0;
                    for j in 0..l {
                        if valid[j] && w[j] != 0.0 {
                            dp[j] = dot(dci, &cache.v.row(bi * l + j)[lo..lo + dh]);
                            wdp += w[j] * dp[j];
                            axpy(w[j], dci, &mut dv.row_mut(bi * l + j)[lo..lo + dh]);
                        }
                    }
                    for j in 0..l {
                        if valid[j] && w[j] != 0.0 {
                            let ds = w[j] * (dp[j] - wdp) * scale;
                            axpy(
                                ds,
                                &cache.k.row(bi * l + j)[lo..lo + dh],
                                &mut dq.row_mut(bi * l + i)[lo..lo + dh],
                            );
                            axpy(
                                ds,
                                &cache.q.row(bi * l + i)[lo..lo + dh],
                                &mut dk.row_mut(bi * l + j)[lo..lo + dh],
                            );
                        }
                    }
                }
            }
        }
        let mut dx = self.query.backward(&cache.x, &dq);
        dx.add_assign(&self.key.backward(&cache.x, &dk));
        dx.add_assign(&self.value.backward(&cache.x, &dv));
        dx
    }
}

impl HasParams for MultiHeadAttention {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.query.params();
        v.extend(self.key.params());
        v.extend(self.value.params());
        v.extend(self.output.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.query.params_mut();
        v.extend(self.key.params_mut());
        v.extend(self.value.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}
