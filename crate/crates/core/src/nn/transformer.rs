use rand::Rng;

use super::ops::{dropout_backward, dropout_mode};
use super::{
    AttentionCache, FeedForward, FeedForwardCache, HasParams, LayerNorm, LayerNormCache, Mode,
    MultiHeadAttention, Param, Tensor,
};
use crate::error::Result;

/// Post-norm encoder block:
/// `h = LN(x + drop(attn(x)))`, `y = LN(h + drop(ff(h)))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    attn: AttentionCache,
    attn_drop: Option<Vec<f64>>,
    norm1: LayerNormCache,
    ff: FeedForwardCache,
    ff_drop: Option<Vec<f64>>,
    norm2: LayerNormCache,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            attention: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng)?,
            norm1: LayerNorm::new(&format!("{name}.norm1"), dim),
            ff: FeedForward::new(&format!("{name}.ff"), dim, ff_dim, dim, dropout, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), dim),
            dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, BlockCache)> {
        let (a, attn) = self.attention.forward(x, mask)?;
        let (mut a, attn_drop) = dropout_mode(&a, self.dropout, mode);
        a.add_assign(x);
        let (h, norm1) = self.norm1.forward(&a);
        let (f, ff) = self.ff.forward(&h, mode)?;
        let (mut f, ff_drop) = dropout_mode(&f, self.dropout, mode);
        f.add_assign(&h);
        let (y, norm2) = self.norm2.forward(&f);
        Ok((
            y,
            BlockCache {
                attn,
                attn_drop,
                norm1,
                ff,
                ff_drop,
                norm2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> Tensor {
        let dsum2 = self.norm2.backward(&cache.norm2, dy);
        let mut df = dsum2.clone();
        dropout_backward(&mut df, &cache.ff_drop);
        let mut dh = self.ff.backward(&cache.ff, &df);
        dh.add_assign(&dsum2);
        let dsum1 = self.norm1.backward(&cache.norm1, &dh);
        let mut da = dsum1.clone();
        dropout_backward(&mut da, &cache.attn_drop);
        let mut dx = self.attention.backward(&cache.attn, &da);
        dx.add_assign(&dsum1);
        dx
    }
}

impl HasParams for EncoderBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.attention.params();
        v.extend(self.norm1.params());
        v.extend(self.ff.params());
        v.extend(self.norm2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.attention.params_mut();
        v.extend(self.norm1.params_mut());
        v.extend(self.ff.params_mut());
        v.extend(self.norm2.params_mut());
        v
    }
}

/// Stack of encoder blocks sharing one padding mask.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub blocks: Vec<EncoderBlock>,
}

#[derive(Clone, Debug)]
pub struct TransformerCache {
    blocks: Vec<BlockCache>,
}

impl TransformerCache {
    /// Attention weights of every block, each `[B, H, L, L]`.
    pub fn attention_weights(&self) -> Vec<&[f64]> {
        self.blocks.iter().map(|b| b.attn.weights.as_slice()).collect()
    }
}

impl Transformer {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| EncoderBlock::new(&format!("{name}.{i}"), dim, heads, ff_dim, dropout, rng))
            .collect::<Result<_>>()?;
        Ok(Transformer { blocks })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, TransformerCache)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(&h, mask, mode)?;
            caches.push(c);
            h = y;
        }
        Ok((h, TransformerCache { blocks: caches }))
    }

    pub fn backward(&mut self, cache: &TransformerCache, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = block.backward(c, &g);
        }
        g
    }
}

impl HasParams for Transformer {
    fn params(&self) -> Vec<&Param> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}
