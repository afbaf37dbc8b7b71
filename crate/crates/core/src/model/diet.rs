use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{effective_len, Layout};
use super::similarity::{confidences, negative_sampling_loss, similarity_scores};
use super::{crf, rank_intents, tags_to_entities, LossParts, Prediction};
use crate::error::{Error, Result};
use crate::featurizer::FeatureBundle;
use crate::nn::{
    axpy, xavier_uniform, HasParams, Linear, Mode, Param, SparseLinear, Tensor, Transformer,
    TransformerCache,
};

/// Hyper-parameters of the joint model. The baselines read the subset that
/// applies to them (see their docs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DietConfig {
    pub transformer_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Upper bound; the effective count is `min(n_negatives, |intents| - 1)`.
    pub n_negatives: usize,
    pub embed_dim: usize,
    pub use_sparse: bool,
    pub use_dense: bool,
    pub entity_head: bool,
    pub max_len: usize,
    pub loss_temperature: f64,
    pub entity_weight: f64,
}

impl Default for DietConfig {
    fn default() -> Self {
        DietConfig {
            transformer_dim: 128,
            heads: 4,
            layers: 2,
            ff_dim: 256,
            dropout: 0.1,
            n_negatives: 10,
            embed_dim: 32,
            use_sparse: true,
            use_dense: true,
            entity_head: true,
            max_len: 64,
            loss_temperature: 1.0,
            entity_weight: 1.0,
        }
    }
}

impl DietConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return fail("layers must be at least 1");
        }
        if self.n_negatives == 0 {
            return fail("n_negatives must be at least 1");
        }
        if !self.use_sparse && !self.use_dense {
            return fail("at least one of use_sparse / use_dense must be set");
        }
        if self.transformer_dim == 0 || self.ff_dim == 0 || self.embed_dim == 0 || self.max_len == 0 {
            return fail("dimensions and max_len must be positive");
        }
        if self.heads == 0 || !self.transformer_dim.is_multiple_of(self.heads) {
            return fail("transformer_dim must be a positive multiple of heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.loss_temperature > 0.0) || !self.loss_temperature.is_finite() {
            return fail("loss_temperature must be positive");
        }
        if !(self.entity_weight >= 0.0) || !self.entity_weight.is_finite() {
            return fail("entity_weight must be non-negative");
        }
        Ok(())
    }
}

/// Transformer outputs for a padded batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[B, embed_dim]` utterance vectors.
    pub cls_vecs: Tensor,
    /// `[B, W, transformer_dim]`; sequence `b` has its tokens at rows
    /// `b * W .. b * W + lengths[b]` and the CLS output right after.
    pub states: Tensor,
    pub lengths: Vec<usize>,
}

impl Encoded {
    pub fn width(&self) -> usize {
        self.states.shape()[1]
    }

    /// Token outputs of sequence `b` as a `[T, D]` tensor.
    pub fn token_states(&self, b: usize) -> Tensor {
        let d = self.states.cols();
        let start = b * self.width() * d;
        let t = self.lengths[b];
        Tensor::from_vec(&[t, d], self.states.data()[start..start + t * d].to_vec())
            .expect("slice matches shape")
    }
}

pub(crate) struct EncodeCache {
    layout: Layout,
    active: Vec<Vec<u32>>,
    concat: Tensor,
    tf: TransformerCache,
    cls_hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct DietModel {
    pub cfg: DietConfig,
    pub intents: Vec<String>,
    pub tagset: Vec<String>,
    pub sparse_dim: usize,
    /// Width of the dense segment actually fed to the fusion layer.
    pub dense_dim: usize,
    pub sparse_proj: Option<SparseLinear>,
    pub fusion: Linear,
    /// Rows `0..max_len` for tokens, row `max_len` for CLS.
    pub positional: Param,
    pub transformer: Transformer,
    pub intent_out: Linear,
    pub label_table: Param,
    pub crf_emission: Option<Linear>,
    /// `[L + 2, L + 2]`, indexed `[from][to]`, BOS = L, EOS = L + 1.
    pub crf_transitions: Option<Param>,
}

impl DietModel {
    pub fn new(
        cfg: DietConfig,
        sparse_dim: usize,
        dense_dim: usize,
        intents: Vec<String>,
        tagset: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if intents.is_empty() {
            return Err(Error::Config("empty intent inventory".into()));
        }
        if cfg.use_dense && dense_dim == 0 {
            return Err(Error::Config("use_dense requires a dense provider (dense_dim is 0)".into()));
        }
        if cfg.use_sparse && sparse_dim == 0 {
            return Err(Error::Config("use_sparse requires a non-empty sparse vocabulary".into()));
        }
        if cfg.entity_head && tagset.is_empty() {
            return Err(Error::Config("entity head needs a tagset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.transformer_dim;
        let dense_dim = if cfg.use_dense { dense_dim } else { 0 };
        let sparse_proj = cfg
            .use_sparse
            .then(|| SparseLinear::new("sparse_proj", sparse_dim, d, &mut rng));
        let fusion_in = if cfg.use_sparse { d } else { 0 } + dense_dim;
        let fusion = Linear::new("fusion", fusion_in, d, &mut rng);
        let positional = Param::new(
            "positional",
            xavier_uniform(&[cfg.max_len + 1, d], d, d, &mut rng),
        );
        let transformer = Transformer::new(
            "transformer",
            cfg.layers,
            d,
            cfg.heads,
            cfg.ff_dim,
            cfg.dropout,
            &mut rng,
        )?;
        let intent_out = Linear::new("intent_out", d, cfg.embed_dim, &mut rng);
        let label_table = Param::new(
            "label_table",
            xavier_uniform(&[intents.len(), cfg.embed_dim], cfg.embed_dim, intents.len(), &mut rng),
        );
        let (crf_emission, crf_transitions) = if cfg.entity_head {
            let l = tagset.len();
            (
                Some(Linear::new("crf_emission", d, l, &mut rng)),
                Some(Param::zeros("crf_transitions", &[l + 2, l + 2])),
            )
        } else {
            (None, None)
        };
        Ok(DietModel {
            cfg,
            intents,
            tagset,
            sparse_dim,
            dense_dim,
            sparse_proj,
            fusion,
            positional,
            transformer,
            intent_out,
            label_table,
            crf_emission,
            crf_transitions,
        })
    }

    fn sparse_width(&self) -> usize {
        if self.sparse_proj.is_some() {
            self.cfg.transformer_dim
        } else {
            0
        }
    }

    fn check_dense(&self, bundle: &FeatureBundle) -> Result<()> {
        let ok_cls = bundle.cls_dense.as_ref().is_some_and(|v| v.len() == self.dense_dim);
        let ok_tok = bundle
            .token_dense
            .as_ref()
            .is_none_or(|td| td.len() == bundle.len() && td.iter().all(|v| v.len() == self.dense_dim));
        if ok_cls && ok_tok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "dense features of width {} do not match the model's {}",
                bundle.dense_dim(),
                self.dense_dim
            )))
        }
    }

    pub(crate) fn encode_batch(
        &self,
        bundles: &[&FeatureBundle],
        mode: &mut Mode<'_>,
    ) -> Result<(Encoded, EncodeCache)> {
        let d = self.cfg.transformer_dim;
        let ds = self.sparse_width();
        let dd = self.dense_dim;
        let layout = Layout::new(
            bundles
                .iter()
                .map(|b| effective_len(b.len(), self.cfg.max_len))
                .collect(),
        );
        let (bsz, w) = (layout.batch(), layout.width);
        let mut concat = Tensor::zeros(&[bsz, w, ds + dd]);
        let mut active = vec![Vec::new(); bsz * w];
        for (b, bundle) in bundles.iter().enumerate() {
            if bundle.is_empty() {
                return Err(Error::Shape("utterance without tokens".into()));
            }
            if dd > 0 {
                self.check_dense(bundle)?;
            }
            let t_len = layout.lengths[b];
            for p in 0..=t_len {
                let r = layout.row(b, p);
                let row = concat.row_mut(r);
                if let Some(sp) = &self.sparse_proj {
                    let sv = if p < t_len { &bundle.token_sparse[p] } else { &bundle.cls_sparse };
                    sp.forward_into(sv.indices(), &mut row[..ds])?;
                    active[r] = sv.indices().to_vec();
                }
                if dd > 0 {
                    let v = if p < t_len {
                        bundle.token_dense.as_ref().map(|td| td[p].as_slice())
                    } else {
                        bundle.cls_dense.as_deref()
                    };
                    if let Some(v) = v {
                        for (o, x) in row[ds..].iter_mut().zip(v) {
                            *o = f64::from(*x);
                        }
                    }
                }
            }
        }
        let mut x = self.fusion.forward(&concat)?;
        for b in 0..bsz {
            let t_len = layout.lengths[b];
            for p in 0..=t_len {
                let pos = if p < t_len { p } else { self.cfg.max_len };
                axpy(1.0, self.positional.value.row(pos), x.row_mut(layout.row(b, p)));
            }
        }
        let (states, tf) = self.transformer.forward(&x, &layout.mask, mode)?;
        let mut cls_hidden = Tensor::zeros(&[bsz, d]);
        for b in 0..bsz {
            cls_hidden.row_mut(b).copy_from_slice(states.row(layout.cls_row(b)));
        }
        let cls_vecs = self.intent_out.forward(&cls_hidden)?;
        let encoded = Encoded {
            cls_vecs,
            states,
            lengths: layout.lengths.clone(),
        };
        Ok((
            encoded,
            EncodeCache {
                layout,
                active,
                concat,
                tf,
                cls_hidden,
            },
        ))
    }

    /// Eval-mode encoding of a padded batch.
    pub fn encode(&self, bundles: &[&FeatureBundle]) -> Result<Encoded> {
        Ok(self.encode_batch(bundles, &mut Mode::Eval)?.0)
    }

    fn backward(&mut self, cache: &EncodeCache, d_cls: &Tensor, d_states: Option<Tensor>) {
        let layout = &cache.layout;
        let d = self.cfg.transformer_dim;
        let ds = self.sparse_width();
        let d_hidden = self.intent_out.backward(&cache.cls_hidden, d_cls);
        let mut d_out = d_states.unwrap_or_else(|| Tensor::zeros(&[layout.batch(), layout.width, d]));
        for b in 0..layout.batch() {
            axpy(1.0, d_hidden.row(b), d_out.row_mut(layout.cls_row(b)));
        }
        let d_x = self.transformer.backward(&cache.tf, &d_out);
        for b in 0..layout.batch() {
            let t_len = layout.lengths[b];
            for p in 0..=t_len {
                let pos = if p < t_len { p } else { self.cfg.max_len };
                axpy(1.0, d_x.row(layout.row(b, p)), self.positional.grad.row_mut(pos));
            }
        }
        let d_concat = self.fusion.backward(&cache.concat, &d_x);
        if let Some(sp) = &mut self.sparse_proj {
            for b in 0..layout.batch() {
                for p in 0..=layout.lengths[b] {
                    let r = layout.row(b, p);
                    sp.backward_row(&cache.active[r], &d_concat.row(r)[..ds]);
                }
            }
        }
    }

    /// Dot products of `cls_vec` with every label row.
    pub fn intent_similarities(&self, cls_vec: &[f64]) -> Vec<f64> {
        similarity_scores(cls_vec, &self.label_table.value)
    }

    fn crf_parts(&self) -> Result<(&Linear, &Param)> {
        match (&self.crf_emission, &self.crf_transitions) {
            (Some(e), Some(t)) => Ok((e, t)),
            _ => Err(Error::Config("model has no entity head".into())),
        }
    }

    /// CRF negative log-likelihood of `gold` given token outputs `[T, D]`.
    pub fn crf_nll(&self, token_states: &Tensor, gold: &[usize]) -> Result<f64> {
        let (emission, transitions) = self.crf_parts()?;
        self.check_tags(token_states.rows(), gold)?;
        let em = emission.forward(token_states)?;
        Ok(crf::nll_with_grad(em.data(), transitions.value.data(), self.tagset.len(), gold).0)
    }

    /// Viterbi tag sequence for token outputs `[T, D]`.
    pub fn crf_decode(&self, token_states: &Tensor) -> Result<Vec<usize>> {
        let (emission, transitions) = self.crf_parts()?;
        let em = emission.forward(token_states)?;
        Ok(crf::viterbi(em.data(), transitions.value.data(), self.tagset.len()).0)
    }

    fn check_tags(&self, t_len: usize, gold: &[usize]) -> Result<()> {
        if gold.len() != t_len {
            return Err(Error::Shape(format!(
                "{} gold tags for {t_len} tokens",
                gold.len()
            )));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= self.tagset.len()) {
            return Err(Error::Shape(format!("tag index {bad} outside tagset")));
        }
        Ok(())
    }

    /// `intent_loss + entity_weight * crf_nll` for one utterance. `rng`
    /// drives dropout and negative sampling. With `backward`, gradients of
    /// `scale * total` are accumulated.
    pub fn total_loss(
        &mut self,
        bundle: &FeatureBundle,
        gold_intent: usize,
        gold_tags: Option<&[usize]>,
        rng: &mut dyn RngCore,
        backward: bool,
        scale: f64,
    ) -> Result<LossParts> {
        let gold_tags = if self.cfg.entity_head {
            let tags = gold_tags
                .filter(|t| !t.is_empty())
                .ok_or_else(|| Error::Config("entity head enabled but no gold tags given".into()))?;
            self.check_tags(bundle.len(), tags)?;
            Some(tags)
        } else {
            None
        };
        let (enc, cache) = {
            let mut mode = Mode::Train(&mut *rng);
            self.encode_batch(&[bundle], &mut mode)?
        };
        let n_neg = self.cfg.n_negatives.min(self.intents.len().saturating_sub(1));
        let intent = negative_sampling_loss(
            enc.cls_vecs.row(0),
            &self.label_table.value,
            gold_intent,
            n_neg,
            self.cfg.loss_temperature,
            rng,
        )?;

        let weight = self.cfg.entity_weight;
        let mut entity = 0.0;
        let mut d_states = None;
        if let (Some(tags), true) = (gold_tags, weight != 0.0) {
            let t_len = enc.lengths[0];
            let rows = enc.token_states(0);
            let (emission, transitions) = (
                self.crf_emission.as_mut().expect("entity head"),
                self.crf_transitions.as_mut().expect("entity head"),
            );
            let em = emission.forward(&rows)?;
            let n_tags = self.tagset.len();
            let (nll, d_em, d_tr) = crf::nll_with_grad(em.data(), transitions.value.data(), n_tags, &tags[..t_len]);
            entity = nll;
            if backward {
                let k = weight * scale;
                let d_em = Tensor::from_vec(&[t_len, n_tags], d_em.into_iter().map(|g| g * k).collect())?;
                let d_rows = emission.backward(&rows, &d_em);
                axpy(k, &d_tr, transitions.grad.data_mut());
                let mut ds = Tensor::zeros(enc.states.shape());
                let d = self.cfg.transformer_dim;
                ds.data_mut()[..t_len * d].copy_from_slice(d_rows.data());
                d_states = Some(ds);
            }
        }
        let total = intent.loss + weight * entity;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {total}")));
        }
        if backward {
            for (c, g) in &intent.d_rows {
                axpy(scale, g, self.label_table.grad.row_mut(*c));
            }
            let d_cls = Tensor::from_vec(
                &[1, self.cfg.embed_dim],
                intent.d_cls.iter().map(|g| g * scale).collect(),
            )?;
            self.backward(&cache, &d_cls, d_states);
        }
        Ok(LossParts {
            intent: intent.loss,
            entity,
            total,
        })
    }

    pub fn predict_batch(&self, bundles: &[&FeatureBundle]) -> Result<Vec<Prediction>> {
        if bundles.is_empty() {
            return Ok(Vec::new());
        }
        let enc = self.encode(bundles)?;
        let mut out = Vec::with_capacity(bundles.len());
        for (b, bundle) in bundles.iter().enumerate() {
            let cls = enc.cls_vecs.row(b);
            let conf = confidences(&self.intent_similarities(cls), self.cfg.loss_temperature);
            let entities = if self.cfg.entity_head {
                let tags = self.crf_decode(&enc.token_states(b))?;
                tags_to_entities(&tags, &bundle.spans[..enc.lengths[b]], &self.tagset)
            } else {
                Vec::new()
            };
            out.push(Prediction {
                ranking: rank_intents(&self.intents, &conf),
                entities,
                cls_embedding: cls.to_vec(),
            });
        }
        Ok(out)
    }

    pub fn predict(&self, bundle: &FeatureBundle) -> Result<Prediction> {
        Ok(self.predict_batch(&[bundle])?.remove(0))
    }
}

impl HasParams for DietModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        if let Some(sp) = &self.sparse_proj {
            v.extend(sp.params());
        }
        v.extend(self.fusion.params());
        v.push(&self.positional);
        v.extend(self.transformer.params());
        v.extend(self.intent_out.params());
        v.push(&self.label_table);
        if let Some(e) = &self.crf_emission {
            v.extend(e.params());
        }
        if let Some(t) = &self.crf_transitions {
            v.push(t);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if let Some(sp) = &mut self.sparse_proj {
            v.extend(sp.params_mut());
        }
        v.extend(self.fusion.params_mut());
        v.push(&mut self.positional);
        v.extend(self.transformer.params_mut());
        v.extend(self.intent_out.params_mut());
        v.push(&mut self.label_table);
        if let Some(e) = &mut self.crf_emission {
            v.extend(e.params_mut());
        }
        if let Some(t) = &mut self.crf_transitions {
            v.push(t);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::{SparseVec, FeatureBundle};
    use crate::nn::grad_check;

    fn tiny_cfg() -> DietConfig {
        DietConfig {
            transformer_dim: 8,
            heads: 2,
            layers: 2,
            ff_dim: 16,
            dropout: 0.0,
            embed_dim: 4,
            max_len: 6,
            use_dense: false,
            ..DietConfig::default()
        }
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn bundle(tokens: &[&[u32]]) -> FeatureBundle {
        let token_sparse: Vec<SparseVec> = tokens.iter().map(|t| SparseVec::from_indices(t.to_vec())).collect();
        FeatureBundle {
            cls_sparse: SparseVec::union(&token_sparse),
            spans: (0..tokens.len()).map(|i| (i * 2, i * 2 + 1)).collect(),
            token_sparse,
            token_dense: None,
            cls_dense: None,
        }
    }

    fn tiny_model(seed: u64) -> DietModel {
        DietModel::new(tiny_cfg(), 10, 0, names(&["a", "b", "c"]), names(&["O", "B-x", "I-x"]), seed).unwrap()
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = tiny_model(3);
        let b = tiny_model(3);
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.value, q.value);
        }
        assert_ne!(a.label_table.value, tiny_model(4).label_table.value);
    }

    #[test]
    fn rejects_invalid_configurations() {
        let mut cfg = tiny_cfg();
        cfg.use_sparse = false;
        assert!(DietModel::new(cfg.clone(), 10, 0, names(&["a"]), vec![], 0).is_err());
        cfg.use_dense = true;
        assert!(DietModel::new(cfg, 10, 0, names(&["a"]), names(&["O"]), 0).is_err());
    }

    #[test]
    fn label_table_has_one_row_per_intent() {
        let intents: Vec<String> = (0..14).map(|i| format!("intent-{i:02}")).collect();
        let m = DietModel::new(tiny_cfg(), 10, 0, intents, names(&["O"]), 0).unwrap();
        assert_eq!(m.label_table.value.shape(), &[14, 4]);
    }

    #[test]
    fn transformer_input_has_cls_appended() {
        let m = tiny_model(0);
        let enc = m.encode(&[&bundle(&[&[1], &[2, 3], &[4]])]).unwrap();
        assert_eq!(enc.states.shape(), &[1, 4, 8]);
        assert_eq!(enc.lengths, vec![3]);
    }

    #[test]
    fn identical_label_rows_give_uniform_ranking_by_name() {
        let mut m = tiny_model(1);
        let row = m.label_table.value.row(0).to_vec();
        for r in 1..3 {
            m.label_table.value.row_mut(r).copy_from_slice(&row);
        }
        let p = m.predict(&bundle(&[&[5]])).unwrap();
        for r in &p.ranking {
            assert!((r.confidence - 1.0 / 3.0).abs() < 1e-12);
        }
        let order: Vec<&str> = p.ranking.iter().map(|r| r.intent.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn long_inputs_are_truncated() {
        let m = tiny_model(0);
        let toks: Vec<&[u32]> = vec![&[1]; 9];
        let enc = m.encode(&[&bundle(&toks)]).unwrap();
        assert_eq!(enc.lengths, vec![6]);
        let p = m.predict(&bundle(&toks)).unwrap();
        assert!(p.entities.iter().all(|e| e.end <= 11));
    }

    #[test]
    fn padded_batch_matches_single() {
        let m = tiny_model(7);
        let short = bundle(&[&[1, 2]]);
        let long = bundle(&[&[3], &[4], &[5, 6], &[7]]);
        let alone = m.predict(&short).unwrap();
        let batch = m.predict_batch(&[&long, &short]).unwrap();
        for (x, y) in alone.cls_embedding.iter().zip(&batch[1].cls_embedding) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entity_weight_zero_leaves_crf_untouched() {
        let mut m = tiny_model(2);
        m.cfg.entity_weight = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.total_loss(&bundle(&[&[1], &[2]]), 1, Some(&[0, 1]), &mut rng, true, 1.0).unwrap();
        assert!(m.crf_emission.as_ref().unwrap().weight.grad.data().iter().all(|&g| g == 0.0));
        assert!(m.crf_transitions.as_ref().unwrap().grad.data().iter().all(|&g| g == 0.0));
        assert!(m.label_table.grad.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn entity_head_requires_tags() {
        let mut m = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.total_loss(&bundle(&[&[1]]), 0, None, &mut rng, false, 1.0).is_err());
        assert!(m.total_loss(&bundle(&[&[1]]), 0, Some(&[0, 0]), &mut rng, false, 1.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = tiny_model(11);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        if let Some(t) = &mut m.crf_transitions {
            t.value = xavier_uniform(t.value.shape(), 3, 3, &mut r);
        }
        let b = bundle(&[&[1, 4], &[2], &[3, 9]]);
        let report = grad_check(
            &mut m,
            |m, bw| {
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                Ok(m.total_loss(&b, 2, Some(&[1, 2, 0]), &mut rng, bw, 1.0)?.total)
            },
            1e-5,
            1e-3,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
