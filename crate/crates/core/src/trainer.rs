//! Training loop, class-balanced batching, k-fold cross-validation and the
//! train-on-one-corpus / test-on-another protocol.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_kfold, Dataset};
use crate::error::{Error, Result};
use crate::eval::{mean_std, micro_f1, EvalReport};
use crate::featurizer::{featurize, fit_sparse, model_tokens, DenseProvider, SparseConfig};
use crate::hash::{hex_fingerprint, Fnv1a};
use crate::model::{
    bio_tagset, spans_to_tags, AnyModel, DietConfig, DietModel, EmbedBaselineModel, Example, ModelKind,
    TfBaselineModel,
};
use crate::nn::{AdamState, HasParams};
use crate::pipeline::TrainedModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub balanced_batching: bool,
    /// Stop once the epoch loss has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
    pub model_kind: ModelKind,
    pub learning_rate: f64,
    pub model: DietConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            balanced_batching: true,
            early_stop_patience: None,
            model_kind: ModelKind::Diet,
            learning_rate: 1e-3,
            model: DietConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.model.validate()
    }
}

/// Derives an independent seed for a named sub-stream.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    Fnv1a::default()
        .write(&base.to_le_bytes())
        .write_str(stream)
        .write(&index.to_le_bytes())
        .finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean example loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Splits `labels.len()` examples into batches.
///
/// Without balancing this is a seeded shuffle cut into chunks. With
/// balancing every batch holds one example of each class (a rotating subset
/// when there are more classes than slots) and the remaining slots follow the
/// class frequencies. Each class is drawn from its own reshuffled queue, so
/// rare classes recycle within an epoch while frequent ones are seen about
/// once. The number of batches is `ceil(n / batch_size)`.
pub fn make_batches(labels: &[usize], batch_size: usize, balanced: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = labels.len();
    if n == 0 {
        return Vec::new();
    }
    let n_batches = n.div_ceil(batch_size);
    if !balanced {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        return order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let classes: Vec<usize> = members.keys().copied().collect();
    let mut queues: Vec<(Vec<usize>, usize)> = members
        .into_values()
        .map(|mut m| {
            m.shuffle(rng);
            (m, 0)
        })
        .collect();
    let mut draw = |c: usize, rng: &mut ChaCha8Rng| -> usize {
        let (q, pos) = &mut queues[c];
        if *pos == q.len() {
            q.shuffle(rng);
            *pos = 0;
        }
        *pos += 1;
        q[*pos - 1]
    };

    let weights: Vec<i64> = classes
        .iter()
        .map(|c| labels.iter().filter(|&&l| l == *c).count() as i64)
        .collect();
    let total: i64 = weights.iter().sum();
    let mut current = vec![0i64; classes.len()];
    let mut rotate = 0usize;
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        let reserved = classes.len().min(batch_size);
        for j in 0..reserved {
            let c = (rotate + j) % classes.len();
            batch.push(draw(c, rng));
        }
        rotate = (rotate + reserved) % classes.len();
        while batch.len() < batch_size {
            // smooth weighted round-robin over class frequencies
            for (cur, w) in current.iter_mut().zip(&weights) {
                *cur += w;
            }
            let c = (0..classes.len()).max_by_key(|&c| (current[c], std::cmp::Reverse(c))).unwrap();
            current[c] -= total;
            batch.push(draw(c, rng));
        }
        batch.shuffle(rng);
        batches.push(batch);
    }
    batches
}

/// Featurizes `ds` with a fresh sparse vocabulary and builds an untrained
/// model. Returns the model shell and the training examples.
fn prepare(
    ds: &Dataset,
    cfg: &TrainConfig,
    feat_cfg: &SparseConfig,
    provider: Option<&DenseProvider>,
) -> Result<(TrainedModel, Vec<Example>)> {
    cfg.validate()?;
    if ds.intents().len() < 2 {
        return Err(Error::Dataset(format!(
            "training needs at least two intents, {} has {}",
            ds.name,
            ds.intents().len()
        )));
    }
    let tokens: Vec<_> = ds.utterances().iter().map(|u| model_tokens(&u.text)).collect();
    let texts: Vec<Vec<String>> = tokens
        .iter()
        .map(|ts| ts.iter().map(|t| t.text.clone()).collect())
        .collect();
    let sparse = fit_sparse(&texts, feat_cfg)?;
    let intents: Vec<String> = ds.intents().iter().cloned().collect();
    let model_seed = derive_seed(cfg.seed, "init", 0);

    let mut mcfg = cfg.model.clone();
    let (model, provider) = match cfg.model_kind {
        ModelKind::Diet => {
            mcfg.use_dense &= provider.is_some();
            mcfg.entity_head &= !ds.entity_types().is_empty();
            let provider = if mcfg.use_dense { provider } else { None };
            let tagset = if mcfg.entity_head { bio_tagset(ds.entity_types()) } else { Vec::new() };
            let dense_dim = provider.map_or(0, DenseProvider::dim);
            (
                AnyModel::Diet(DietModel::new(mcfg, sparse.dim(), dense_dim, intents, tagset, model_seed)?),
                provider,
            )
        }
        ModelKind::TfBaseline => {
            let p = provider.ok_or_else(|| Error::Config("tf_baseline requires a dense provider".into()))?;
            (
                AnyModel::TfBaseline(TfBaselineModel::new(mcfg, p.dim(), intents, model_seed)?),
                Some(p),
            )
        }
        ModelKind::EmbedBaseline => (
            AnyModel::EmbedBaseline(EmbedBaselineModel::new(mcfg, sparse.dim(), intents, model_seed)?),
            None,
        ),
    };

    let index: BTreeMap<&str, usize> = model
        .intents()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let examples = ds
        .utterances()
        .iter()
        .zip(&tokens)
        .map(|(u, toks)| {
            let bundle = featurize(&sparse, provider, toks, &u.text)?;
            let tags = if model.uses_tags() {
                spans_to_tags(&bundle.spans, &u.entities, model.tagset())
            } else {
                Vec::new()
            };
            Ok(Example {
                bundle,
                intent: index[u.intent.as_str()],
                tags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        TrainedModel {
            model,
            sparse,
            provider: provider.cloned(),
        },
        examples,
    ))
}

/// Fits featurizer and model on `ds` and returns the frozen model with its
/// per-epoch loss history.
pub fn train(
    ds: &Dataset,
    cfg: &TrainConfig,
    feat_cfg: &SparseConfig,
    provider: Option<&DenseProvider>,
) -> Result<(TrainedModel, TrainHistory)> {
    let (mut trained, examples) = prepare(ds, cfg, feat_cfg, provider)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.intent).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train", 0));
    let mut adam = AdamState::new(cfg.learning_rate);
    let model = &mut trained.model;
    model.zero_grad();

    let mut history = TrainHistory {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        stopped_early: false,
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(&labels, cfg.batch_size, cfg.balanced_batching, &mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in &batches {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                sum += model.example_loss(&examples[i], &mut rng, true, scale)?.total;
            }
            count += batch.len();
            adam.step(model.params_mut());
        }
        let mean = sum / count as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {mean:.5}");
        history.epoch_losses.push(mean);
        if let Some(patience) = cfg.early_stop_patience {
            if mean < best - 1e-9 {
                best = mean;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((trained, history))
}

/// Hash of every setting that influences a run.
pub fn config_fingerprint(
    cfg: &TrainConfig,
    feat_cfg: &SparseConfig,
    provider: Option<&DenseProvider>,
    extra: &[(&str, u64)],
) -> String {
    let mut h = Fnv1a::default();
    h.write_str(&serde_json::to_string(cfg).expect("config serializes"));
    h.write_str(&serde_json::to_string(feat_cfg).expect("config serializes"));
    h.write_str(&provider.map_or_else(|| "none".to_string(), |p| p.descriptor().fingerprint));
    for (k, v) in extra {
        h.write_str(k).write(&v.to_le_bytes());
    }
    hex_fingerprint(h.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledPrediction {
    pub id: String,
    pub fold: usize,
    pub gold: String,
    pub predicted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub fold_scores: Vec<f64>,
    /// One entry per utterance, in dataset order.
    pub predictions: Vec<PooledPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub config_fingerprint: String,
    pub model_kind: ModelKind,
    pub folds: usize,
    pub runs: usize,
    pub mean_micro_f1: f64,
    /// Population std over the per-run means.
    pub std_micro_f1: f64,
    /// Population std over all individual fold scores, for reference.
    pub std_over_folds: f64,
    pub per_run: Vec<RunResult>,
}

impl CvReport {
    pub fn summary(&self) -> crate::eval::ScoreSummary {
        crate::eval::ScoreSummary {
            mean: self.mean_micro_f1,
            std: self.std_micro_f1,
            runs: self.runs,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
        }
    }
}

/// `runs` repetitions of stratified k-fold CV. Run `r` uses seed
/// `cfg.seed + r` for both the fold assignment and model initialisation;
/// predictions of all folds are pooled before scoring the run.
pub fn cross_validate(
    ds: &Dataset,
    k: usize,
    runs: usize,
    cfg: &TrainConfig,
    feat_cfg: &SparseConfig,
    provider: Option<&DenseProvider>,
) -> Result<CvReport> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    cfg.validate()?;
    let mut per_run = Vec::with_capacity(runs);
    for r in 0..runs {
        let run_seed = cfg.seed.wrapping_add(r as u64);
        let plan = stratified_kfold(ds, k, run_seed)?;
        let folds: Vec<(Vec<usize>, Vec<String>)> = (0..k)
            .into_par_iter()
            .map(|f| {
                let (train_idx, test_idx) = plan.split(ds, f);
                let train_ds = ds.subset(format!("{}-r{r}-f{f}-train", ds.name), &train_idx);
                let test_ds = ds.subset(format!("{}-r{r}-f{f}-test", ds.name), &test_idx);
                let fold_cfg = TrainConfig {
                    seed: derive_seed(run_seed, "fold", f as u64),
                    ..cfg.clone()
                };
                let (model, _) = train(&train_ds, &fold_cfg, feat_cfg, provider)?;
                Ok((test_idx, model.predict_dataset(&test_ds)?))
            })
            .collect::<Result<_>>()?;

        let mut pooled: Vec<Option<PooledPrediction>> = vec![None; ds.len()];
        let mut fold_scores = Vec::with_capacity(k);
        for (f, (idx, preds)) in folds.into_iter().enumerate() {
            let gold: Vec<&str> = idx.iter().map(|&i| ds.utterances()[i].intent.as_str()).collect();
            let pred: Vec<&str> = preds.iter().map(String::as_str).collect();
            if !gold.is_empty() {
                fold_scores.push(micro_f1(&gold, &pred)?);
            }
            for (&i, p) in idx.iter().zip(preds) {
                let u = &ds.utterances()[i];
                if pooled[i].is_some() {
                    return Err(Error::Dataset(format!("utterance {} predicted twice", u.id)));
                }
                pooled[i] = Some(PooledPrediction {
                    id: u.id.clone(),
                    fold: f,
                    gold: u.intent.clone(),
                    predicted: p,
                });
            }
        }
        let predictions = pooled
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::Dataset(format!("utterance {} never predicted", ds.utterances()[i].id))))
            .collect::<Result<Vec<_>>>()?;
        let pred_labels: Vec<&str> = predictions.iter().map(|p| p.predicted.as_str()).collect();
        let report = EvalReport::new(ds, &pred_labels)?;
        log::info!("run {r}: micro-F1 {:.4}", report.micro_f1);
        per_run.push(RunResult {
            seed: run_seed,
            micro_f1: report.micro_f1,
            macro_f1: report.macro_f1,
            fold_scores,
            predictions,
        });
    }
    let means: Vec<f64> = per_run.iter().map(|r| r.micro_f1).collect();
    let (mean, std) = mean_std(&means);
    let all_folds: Vec<f64> = per_run.iter().flat_map(|r| r.fold_scores.iter().copied()).collect();
    Ok(CvReport {
        dataset: ds.name.clone(),
        dataset_fingerprint: hex_fingerprint(ds.fingerprint()),
        config_fingerprint: config_fingerprint(cfg, feat_cfg, provider, &[("folds", k as u64), ("runs", runs as u64)]),
        model_kind: cfg.model_kind,
        folds: k,
        runs,
        mean_micro_f1: mean,
        std_micro_f1: std,
        std_over_folds: mean_std(&all_folds).1,
        per_run,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTestReport {
    pub train_dataset: String,
    pub test_dataset: String,
    pub test_fingerprint: String,
    pub config_fingerprint: String,
    pub model_kind: ModelKind,
    pub runs: usize,
    pub mean_micro_f1: f64,
    pub std_micro_f1: f64,
    pub per_run: Vec<EvalReport>,
}

/// Trains on `train_ds` and scores on `test_ds`, `runs` times with seeds
/// `cfg.seed + r`. Test rows whose gold intent the model never saw stay in
/// and count as errors.
pub fn train_test(
    train_ds: &Dataset,
    test_ds: &Dataset,
    runs: usize,
    cfg: &TrainConfig,
    feat_cfg: &SparseConfig,
    provider: Option<&DenseProvider>,
) -> Result<TrainTestReport> {
    if test_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let unseen: Vec<&String> = test_ds.intents().difference(train_ds.intents()).collect();
    if !unseen.is_empty() {
        log::warn!("test intents absent from training data are scored as errors: {unseen:?}");
    }
    let per_run = (0..runs)
        .map(|r| {
            let run_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(r as u64),
                ..cfg.clone()
            };
            let (model, _) = train(train_ds, &run_cfg, feat_cfg, provider)?;
            model.evaluate(test_ds)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = per_run.iter().map(|r| r.micro_f1).collect();
    let (mean, std) = mean_std(&scores);
    Ok(TrainTestReport {
        train_dataset: train_ds.name.clone(),
        test_dataset: test_ds.name.clone(),
        test_fingerprint: hex_fingerprint(test_ds.fingerprint()),
        config_fingerprint: config_fingerprint(cfg, feat_cfg, provider, &[("runs", runs as u64)]),
        model_kind: cfg.model_kind,
        runs,
        mean_micro_f1: mean,
        std_micro_f1: std,
        per_run,
    })
}
