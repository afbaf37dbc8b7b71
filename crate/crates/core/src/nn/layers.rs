use rand::Rng;

use super::ops::{dropout_backward, dropout_mode};
use super::tensor::{axpy, dot};
use super::{xavier_uniform, HasParams, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer applied independently to every row of its input
/// (the same weights at every sequence step).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                xavier_uniform(&[din, dout], din, dout, rng),
            ),
            bias: Param::zeros(format!("{name}.bias"), &[dout]),
        }
    }

    pub fn from_parts(weight: Param, bias: Param) -> Self {
        Linear { weight, bias }
    }

    pub fn din(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// y[r] = x[r] · W + b for every row r. The output keeps all leading
    /// dimensions of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (din, dout) = (self.din(), self.dout());
        if x.cols() != din {
            return Err(Error::Shape(format!(
                "{}: input width {} != {din}",
                self.weight.name,
                x.cols()
            )));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut y = Tensor::zeros(&shape);
        let w = &self.weight.value;
        for r in 0..x.rows() {
            let yr = y.row_mut(r);
            yr.copy_from_slice(self.bias.value.data());
            for (i, &xi) in x.row(r).iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, w.row(i), yr);
                }
            }
        }
        Ok(y)
    }

    /// Accumulates dW and db, returns dx.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(x.shape());
        for r in 0..x.rows() {
            let dyr = dy.row(r);
            axpy(1.0, dyr, self.bias.grad.data_mut());
            let xr = x.row(r);
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, dyr, self.weight.grad.row_mut(i));
                }
            }
            let dxr = dx.row_mut(r);
            for (i, g) in dxr.iter_mut().enumerate() {
                *g = dot(dyr, self.weight.value.row(i));
            }
        }
        dx
    }
}

impl HasParams for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Linear layer over multi-hot inputs given as lists of active indices.
/// Only the rows of active indices are touched in forward and backward.
#[derive(Clone, Debug)]
pub struct SparseLinear {
    pub weight: Param,
    pub bias: Param,
}

impl SparseLinear {
    pub fn new<R: Rng + ?Sized>(name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        SparseLinear {
            weight: Param::new(
                format!("{name}.weight"),
                xavier_uniform(&[din, dout], din, dout, rng),
            ),
            bias: Param::zeros(format!("{name}.bias"), &[dout]),
        }
    }

    pub fn din(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward_into(&self, active: &[u32], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(self.bias.value.data());
        for &i in active {
            let i = i as usize;
            if i >= self.din() {
                return Err(Error::Shape(format!(
                    "{}: sparse index {i} out of range {}",
                    self.weight.name,
                    self.din()
                )));
            }
            axpy(1.0, self.weight.value.row(i), out);
        }
        Ok(())
    }

    pub fn backward_row(&mut self, active: &[u32], dy: &[f64]) {
        axpy(1.0, dy, self.bias.grad.data_mut());
        for &i in active {
            axpy(1.0, dy, self.weight.grad.row_mut(i as usize));
        }
    }
}

impl HasParams for SparseLinear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub const LN_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        let gamma = Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap();
        LayerNorm {
            gamma: Param::new(format!("{name}.gamma"), gamma),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = xhat.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..y.rows() {
            for ((v, gi), bi) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(dy.shape());
        let n = dy.cols() as f64;
        for r in 0..dy.rows() {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            {
                let dg = self.gamma.grad.data_mut();
                for ((g, d), x) in dg.iter_mut().zip(dyr).zip(xh) {
                    *g += d * x;
                }
            }
            axpy(1.0, dyr, self.beta.grad.data_mut());
            let dxhat: Vec<f64> = dyr
                .iter()
                .zip(self.gamma.value.data())
                .map(|(d, g)| d * g)
                .collect();
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dx = dot(&dxhat, xh) / n;
            let inv = cache.inv_std[r];
            for ((o, d), x) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                *o = inv * (d - mean_d - x * mean_dx);
            }
        }
        dx
    }
}

impl HasParams for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Two-layer position-wise feed-forward with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache {
    x: Tensor,
    hidden: Tensor,
    drop: Option<Vec<f64>>,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        din: usize,
        hidden: usize,
        dout: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            l1: Linear::new(&format!("{name}.l1"), din, hidden, rng),
            l2: Linear::new(&format!("{name}.l2"), hidden, dout, rng),
            dropout,
        }
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, FeedForwardCache)> {
        let mut h = self.l1.forward(x)?;
        h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let (hd, drop) = dropout_mode(&h, self.dropout, mode);
        let y = self.l2.forward(&hd)?;
        Ok((
            y,
            FeedForwardCache {
                x: x.clone(),
                hidden: hd,
                drop,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Tensor) -> Tensor {
        let mut dh = self.l2.backward(&cache.hidden, dy);
        dropout_backward(&mut dh, &cache.drop);
        // ReLU: hidden > 0 exactly where the pre-activation was positive
        // (dropout only zeroes units, never flips sign).
        for (g, h) in dh.data_mut().iter_mut().zip(cache.hidden.data()) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        self.l1.backward(&cache.x, &dh)
    }
}

impl HasParams for FeedForward {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.l1.params();
        v.extend(self.l2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.l1.params_mut();
        v.extend(self.l2.params_mut());
        v
    }
}
