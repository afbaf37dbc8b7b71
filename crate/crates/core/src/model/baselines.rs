//! The two comparison systems.
//!
//! [`EmbedBaselineModel`] maps the bag of sparse features to the label
//! embedding space with a two-layer feed-forward net and trains with the same
//! negative-sampling loss as DIET. [`TfBaselineModel`] runs a transformer over
//! dense features only and classifies the CLS output with a softmax head.
//! Both read their sizes from [`DietConfig`]: the embedding baseline uses
//! `embed_dim`, `n_negatives` and `loss_temperature`; the transformer baseline
//! uses `transformer_dim`, `heads`, `layers`, `ff_dim`, `dropout` and
//! `max_len`.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layout::{effective_len, Layout};
use super::similarity::{confidences, negative_sampling_loss, similarity_scores};
use super::{rank_intents, DietConfig, LossParts, Prediction};
use crate::error::{Error, Result};
use crate::featurizer::FeatureBundle;
use crate::nn::{
    axpy, log_softmax, softmax, xavier_uniform, HasParams, Linear, Mode, Param, SparseLinear,
    Tensor, Transformer, TransformerCache,
};

/// Hidden width of the embedding baseline's feed-forward net.
pub const EMBED_HIDDEN: usize = 64;

#[derive(Clone, Debug)]
pub struct EmbedBaselineModel {
    pub cfg: DietConfig,
    pub intents: Vec<String>,
    pub sparse_dim: usize,
    pub hidden: SparseLinear,
    pub out: Linear,
    pub label_table: Param,
}

struct EmbedCache {
    pre: Vec<f64>,
    h: Tensor,
}

impl EmbedBaselineModel {
    pub fn new(cfg: DietConfig, sparse_dim: usize, intents: Vec<String>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if intents.is_empty() {
            return Err(Error::Config("empty intent inventory".into()));
        }
        if sparse_dim == 0 {
            return Err(Error::Config("embedding baseline needs sparse features".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = SparseLinear::new("embed.hidden", sparse_dim, EMBED_HIDDEN, &mut rng);
        let out = Linear::new("embed.out", EMBED_HIDDEN, cfg.embed_dim, &mut rng);
        let label_table = Param::new(
            "label_table",
            xavier_uniform(&[intents.len(), cfg.embed_dim], cfg.embed_dim, intents.len(), &mut rng),
        );
        Ok(EmbedBaselineModel {
            cfg,
            intents,
            sparse_dim,
            hidden,
            out,
            label_table,
        })
    }

    fn sentence_vec(&self, bundle: &FeatureBundle) -> Result<(Vec<f64>, EmbedCache)> {
        let mut pre = vec![0.0; EMBED_HIDDEN];
        self.hidden.forward_into(bundle.cls_sparse.indices(), &mut pre)?;
        let h = Tensor::from_vec(&[1, EMBED_HIDDEN], pre.iter().map(|&x| x.max(0.0)).collect())?;
        let v = self.out.forward(&h)?.into_data();
        Ok((v, EmbedCache { pre, h }))
    }

    pub fn loss(
        &mut self,
        bundle: &FeatureBundle,
        gold: usize,
        rng: &mut dyn RngCore,
        backward: bool,
        scale: f64,
    ) -> Result<LossParts> {
        if bundle.cls_sparse.nnz() == 0 {
            return Err(Error::Shape("embedding baseline got no sparse features".into()));
        }
        let (v, cache) = self.sentence_vec(bundle)?;
        let n_neg = self.cfg.n_negatives.min(self.intents.len().saturating_sub(1));
        let l = negative_sampling_loss(&v, &self.label_table.value, gold, n_neg, self.cfg.loss_temperature, rng)?;
        if !l.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", l.loss)));
        }
        if backward {
            for (c, g) in &l.d_rows {
                axpy(scale, g, self.label_table.grad.row_mut(*c));
            }
            let dv = Tensor::from_vec(&[1, self.cfg.embed_dim], l.d_cls.iter().map(|g| g * scale).collect())?;
            let dh = self.out.backward(&cache.h, &dv);
            let dpre: Vec<f64> = dh
                .data()
                .iter()
                .zip(&cache.pre)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            self.hidden.backward_row(bundle.cls_sparse.indices(), &dpre);
        }
        Ok(LossParts {
            intent: l.loss,
            entity: 0.0,
            total: l.loss,
        })
    }

    pub fn predict_batch(&self, bundles: &[&FeatureBundle]) -> Result<Vec<Prediction>> {
        bundles
            .iter()
            .map(|b| {
                let (v, _) = self.sentence_vec(b)?;
                let conf = confidences(&similarity_scores(&v, &self.label_table.value), self.cfg.loss_temperature);
                Ok(Prediction {
                    ranking: rank_intents(&self.intents, &conf),
                    entities: Vec::new(),
                    cls_embedding: v,
                })
            })
            .collect()
    }
}

impl HasParams for EmbedBaselineModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.hidden.params();
        v.extend(self.out.params());
        v.push(&self.label_table);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.hidden.params_mut();
        v.extend(self.out.params_mut());
        v.push(&mut self.label_table);
        v
    }
}

#[derive(Clone, Debug)]
pub struct TfBaselineModel {
    pub cfg: DietConfig,
    pub intents: Vec<String>,
    pub dense_dim: usize,
    pub input: Linear,
    pub positional: Param,
    pub transformer: Transformer,
    pub classifier: Linear,
}

struct TfCache {
    layout: Layout,
    input: Tensor,
    tf: TransformerCache,
    cls_hidden: Tensor,
}

impl TfBaselineModel {
    pub fn new(cfg: DietConfig, dense_dim: usize, intents: Vec<String>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if intents.is_empty() {
            return Err(Error::Config("empty intent inventory".into()));
        }
        if dense_dim == 0 {
            return Err(Error::Config("tf_baseline requires a dense provider".into()));
        }
        let d = cfg.transformer_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Linear::new("tf.input", dense_dim, d, &mut rng);
        let positional = Param::new("tf.positional", xavier_uniform(&[cfg.max_len + 1, d], d, d, &mut rng));
        let transformer = Transformer::new("tf.transformer", cfg.layers, d, cfg.heads, cfg.ff_dim, cfg.dropout, &mut rng)?;
        let classifier = Linear::new("tf.classifier", d, intents.len(), &mut rng);
        Ok(TfBaselineModel {
            cfg,
            intents,
            dense_dim,
            input,
            positional,
            transformer,
            classifier,
        })
    }

    fn forward(&self, bundles: &[&FeatureBundle], mode: &mut Mode<'_>) -> Result<(Tensor, TfCache)> {
        let d = self.cfg.transformer_dim;
        let layout = Layout::new(
            bundles
                .iter()
                .map(|b| effective_len(b.len(), self.cfg.max_len))
                .collect(),
        );
        let mut input = Tensor::zeros(&[layout.batch(), layout.width, self.dense_dim]);
        for (b, bundle) in bundles.iter().enumerate() {
            let cls = bundle
                .cls_dense
                .as_ref()
                .filter(|v| v.len() == self.dense_dim)
                .ok_or_else(|| Error::Shape(format!("tf_baseline needs dense features of width {}", self.dense_dim)))?;
            let t_len = layout.lengths[b];
            if let Some(td) = &bundle.token_dense {
                for (p, v) in td.iter().take(t_len).enumerate() {
                    if v.len() != self.dense_dim {
                        return Err(Error::Shape("token dense width mismatch".into()));
                    }
                    for (o, x) in input.row_mut(layout.row(b, p)).iter_mut().zip(v) {
                        *o = f64::from(*x);
                    }
                }
            }
            for (o, x) in input.row_mut(layout.cls_row(b)).iter_mut().zip(cls) {
                *o = f64::from(*x);
            }
        }
        let mut x = self.input.forward(&input)?;
        for b in 0..layout.batch() {
            let t_len = layout.lengths[b];
            for p in 0..=t_len {
                let pos = if p < t_len { p } else { self.cfg.max_len };
                axpy(1.0, self.positional.value.row(pos), x.row_mut(layout.row(b, p)));
            }
        }
        let (states, tf) = self.transformer.forward(&x, &layout.mask, mode)?;
        let mut cls_hidden = Tensor::zeros(&[layout.batch(), d]);
        for b in 0..layout.batch() {
            cls_hidden.row_mut(b).copy_from_slice(states.row(layout.cls_row(b)));
        }
        let logits = self.classifier.forward(&cls_hidden)?;
        Ok((
            logits,
            TfCache {
                layout,
                input,
                tf,
                cls_hidden,
            },
        ))
    }

    pub fn loss(
        &mut self,
        bundle: &FeatureBundle,
        gold: usize,
        rng: &mut dyn RngCore,
        backward: bool,
        scale: f64,
    ) -> Result<LossParts> {
        if gold >= self.intents.len() {
            return Err(Error::Config(format!("gold label {gold} outside inventory")));
        }
        let (logits, cache) = self.forward(&[bundle], &mut Mode::Train(rng))?;
        let logp = log_softmax(logits.row(0));
        let loss = -logp[gold];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        if backward {
            let d_logits: Vec<f64> = logp
                .iter()
                .enumerate()
                .map(|(i, lp)| scale * (lp.exp() - if i == gold { 1.0 } else { 0.0 }))
                .collect();
            let d_logits = Tensor::from_vec(&[1, self.intents.len()], d_logits)?;
            let d_hidden = self.classifier.backward(&cache.cls_hidden, &d_logits);
            let layout = &cache.layout;
            let mut d_out = Tensor::zeros(&[1, layout.width, self.cfg.transformer_dim]);
            d_out.row_mut(layout.cls_row(0)).copy_from_slice(d_hidden.row(0));
            let d_x = self.transformer.backward(&cache.tf, &d_out);
            let t_len = layout.lengths[0];
            for p in 0..=t_len {
                let pos = if p < t_len { p } else { self.cfg.max_len };
                axpy(1.0, d_x.row(layout.row(0, p)), self.positional.grad.row_mut(pos));
            }
            self.input.backward(&cache.input, &d_x);
        }
        Ok(LossParts {
            intent: loss,
            entity: 0.0,
            total: loss,
        })
    }

    pub fn predict_batch(&self, bundles: &[&FeatureBundle]) -> Result<Vec<Prediction>> {
        if bundles.is_empty() {
            return Ok(Vec::new());
        }
        let (logits, cache) = self.forward(bundles, &mut Mode::Eval)?;
        Ok((0..bundles.len())
            .map(|b| Prediction {
                ranking: rank_intents(&self.intents, &softmax(logits.row(b))),
                entities: Vec::new(),
                cls_embedding: cache.cls_hidden.row(b).to_vec(),
            })
            .collect())
    }
}

impl HasParams for TfBaselineModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.input.params();
        v.push(&self.positional);
        v.extend(self.transformer.params());
        v.extend(self.classifier.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.input.params_mut();
        v.push(&mut self.positional);
        v.extend(self.transformer.params_mut());
        v.extend(self.classifier.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::SparseVec;
    use crate::nn::grad_check;

    fn cfg() -> DietConfig {
        DietConfig {
            transformer_dim: 8,
            heads: 2,
            ff_dim: 16,
            dropout: 0.0,
            embed_dim: 4,
            max_len: 8,
            ..DietConfig::default()
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    fn bundle(tokens: &[&[u32]], dense: &[[f32; 3]]) -> FeatureBundle {
        let token_sparse: Vec<SparseVec> = tokens.iter().map(|t| SparseVec::from_indices(t.to_vec())).collect();
        let mut mean = vec![0f32; 3];
        for v in dense {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / dense.len() as f32;
            }
        }
        FeatureBundle {
            cls_sparse: SparseVec::union(&token_sparse),
            spans: (0..tokens.len()).map(|i| (i, i + 1)).collect(),
            token_sparse,
            token_dense: Some(dense.iter().map(|v| v.to_vec()).collect()),
            cls_dense: Some(mean),
        }
    }

    #[test]
    fn tf_baseline_requires_dense() {
        assert!(TfBaselineModel::new(cfg(), 0, names(3), 0).is_err());
    }

    #[test]
    fn tf_equal_logits_give_log_n_loss() {
        let mut m = TfBaselineModel::new(cfg(), 3, names(4), 1).unwrap();
        m.classifier.weight.value.fill(0.0);
        let b = bundle(&[&[0]], &[[0.1, 0.2, 0.3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = m.loss(&b, 2, &mut rng, false, 1.0).unwrap();
        assert!((l.total - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tf_ignores_sparse_features() {
        let m = TfBaselineModel::new(cfg(), 3, names(3), 2).unwrap();
        let a = bundle(&[&[0], &[1]], &[[0.1, 0.2, 0.3], [0.5, -0.1, 0.0]]);
        let mut b = a.clone();
        b.token_sparse = vec![SparseVec::from_indices(vec![7, 9]); 2];
        b.cls_sparse = SparseVec::from_indices(vec![7, 9]);
        assert_eq!(m.predict_batch(&[&a]).unwrap(), m.predict_batch(&[&b]).unwrap());
    }

    #[test]
    fn tf_gradients_match_finite_differences() {
        let mut m = TfBaselineModel::new(cfg(), 3, names(3), 3).unwrap();
        let b = bundle(&[&[0], &[1], &[2]], &[[0.1, 0.2, 0.3], [0.5, -0.1, 0.0], [-0.4, 0.3, 0.9]]);
        let report = grad_check(
            &mut m,
            |m, bw| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                Ok(m.loss(&b, 1, &mut rng, bw, 1.0)?.total)
            },
            1e-5,
            1e-3,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tf_padding_invariance() {
        let m = TfBaselineModel::new(cfg(), 3, names(3), 4).unwrap();
        let short = bundle(&[&[0]], &[[0.3, 0.1, -0.2]]);
        let long = bundle(&[&[0], &[1], &[2]], &[[0.1, 0.2, 0.3], [0.5, -0.1, 0.0], [-0.4, 0.3, 0.9]]);
        let alone = &m.predict_batch(&[&short]).unwrap()[0];
        let padded = &m.predict_batch(&[&long, &short]).unwrap()[1];
        for (x, y) in alone.ranking.iter().zip(&padded.ranking) {
            assert!((x.confidence - y.confidence).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_ignores_token_order() {
        let m = EmbedBaselineModel::new(cfg(), 10, names(3), 5).unwrap();
        let a = bundle(&[&[1, 2], &[3]], &[[0.0; 3], [0.0; 3]]);
        let b = bundle(&[&[3], &[1, 2]], &[[0.0; 3], [0.0; 3]]);
        assert_eq!(m.predict_batch(&[&a]).unwrap(), m.predict_batch(&[&b]).unwrap());
    }

    #[test]
    fn embed_identical_labels_give_uniform_confidences() {
        let mut m = EmbedBaselineModel::new(cfg(), 10, names(3), 6).unwrap();
        m.label_table.value.fill(0.25);
        let p = &m.predict_batch(&[&bundle(&[&[4]], &[[0.0; 3]])]).unwrap()[0];
        assert!(p.ranking.iter().all(|r| (r.confidence - 1.0 / 3.0).abs() < 1e-12));
        assert!(p.entities.is_empty());
    }

    #[test]
    fn embed_gradients_match_finite_differences() {
        let mut m = EmbedBaselineModel::new(cfg(), 10, names(4), 7).unwrap();
        let b = bundle(&[&[1, 5], &[8]], &[[0.0; 3], [0.0; 3]]);
        let report = grad_check(
            &mut m,
            |m, bw| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                Ok(m.loss(&b, 3, &mut rng, bw, 1.0)?.total)
            },
            1e-5,
            1e-3,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn embed_loss_decreases_on_separable_toy() {
        use crate::nn::AdamState;
        let mut m = EmbedBaselineModel::new(cfg(), 4, names(2), 8).unwrap();
        let data = [(bundle(&[&[0]], &[[0.0; 3]]), 0), (bundle(&[&[1]], &[[0.0; 3]]), 1)];
        let mut adam = AdamState::new(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let total = |m: &mut EmbedBaselineModel, rng: &mut ChaCha8Rng| -> f64 {
            data.iter().map(|(b, g)| m.loss(b, *g, rng, false, 1.0).unwrap().total).sum()
        };
        let before = total(&mut m, &mut rng);
        for _ in 0..100 {
            for (b, g) in &data {
                m.loss(b, *g, &mut rng, true, 1.0).unwrap();
            }
            adam.step(m.params_mut());
        }
        assert!(total(&mut m, &mut rng) < before * 0.5);
        for (b, g) in &data {
            assert_eq!(m.predict_batch(&[b]).unwrap()[0].intent(), format!("i{g}"));
        }
    }
}
