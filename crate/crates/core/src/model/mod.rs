//! Intent models: the joint DIET transformer and the two baselines, behind
//! one prediction/training interface.

mod baselines;
mod container;
pub mod crf;
mod diet;
mod layout;
pub mod similarity;
pub mod tags;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use baselines::{EmbedBaselineModel, TfBaselineModel, EMBED_HIDDEN};
pub use container::{read_model, write_model, ModelHeader, MODEL_MAGIC, MODEL_VERSION};
pub use diet::{DietConfig, DietModel, Encoded};
pub use tags::{bio_tagset, spans_to_tags, tags_to_entities, PredictedEntity};

use crate::error::{Error, Result};
use crate::featurizer::FeatureBundle;
use crate::nn::{HasParams, Param};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Diet,
    TfBaseline,
    EmbedBaseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Diet, ModelKind::TfBaseline, ModelKind::EmbedBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Diet => "diet",
            ModelKind::TfBaseline => "tf_baseline",
            ModelKind::EmbedBaseline => "embed_baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "diet" => Ok(ModelKind::Diet),
            "tf_baseline" | "tf" => Ok(ModelKind::TfBaseline),
            "embed_baseline" | "embed" => Ok(ModelKind::EmbedBaseline),
            _ => Err(Error::Config(format!(
                "unknown model kind {s:?} (expected diet, tf_baseline or embed_baseline)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedIntent {
    pub intent: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Sorted by non-increasing confidence; ties keep inventory order.
    pub ranking: Vec<RankedIntent>,
    pub entities: Vec<PredictedEntity>,
    pub cls_embedding: Vec<f64>,
}

impl Prediction {
    pub fn intent(&self) -> &str {
        &self.ranking[0].intent
    }

    pub fn confidence(&self) -> f64 {
        self.ranking[0].confidence
    }
}

/// Pairs confidences with inventory names and sorts them, stably, by
/// non-increasing confidence.
pub fn rank_intents(intents: &[String], confidences: &[f64]) -> Vec<RankedIntent> {
    let mut order: Vec<usize> = (0..intents.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
        .into_iter()
        .map(|i| RankedIntent {
            intent: intents[i].clone(),
            confidence: confidences[i],
        })
        .collect()
}

/// One featurized training instance.
#[derive(Clone, Debug)]
pub struct Example {
    pub bundle: FeatureBundle,
    pub intent: usize,
    /// BIO tag per token; empty when the model has no entity head.
    pub tags: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub intent: f64,
    pub entity: f64,
    pub total: f64,
}

/// Any of the three trainable intent models.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Diet(DietModel),
    TfBaseline(TfBaselineModel),
    EmbedBaseline(EmbedBaselineModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Diet(_) => ModelKind::Diet,
            AnyModel::TfBaseline(_) => ModelKind::TfBaseline,
            AnyModel::EmbedBaseline(_) => ModelKind::EmbedBaseline,
        }
    }

    pub fn intents(&self) -> &[String] {
        match self {
            AnyModel::Diet(m) => &m.intents,
            AnyModel::TfBaseline(m) => &m.intents,
            AnyModel::EmbedBaseline(m) => &m.intents,
        }
    }

    pub fn tagset(&self) -> &[String] {
        match self {
            AnyModel::Diet(m) => &m.tagset,
            _ => &[],
        }
    }

    pub fn config(&self) -> &DietConfig {
        match self {
            AnyModel::Diet(m) => &m.cfg,
            AnyModel::TfBaseline(m) => &m.cfg,
            AnyModel::EmbedBaseline(m) => &m.cfg,
        }
    }

    /// Whether training examples need gold tag sequences.
    pub fn uses_tags(&self) -> bool {
        matches!(self, AnyModel::Diet(m) if m.cfg.entity_head)
    }

    pub fn predict(&self, bundle: &FeatureBundle) -> Result<Prediction> {
        Ok(self.predict_batch(&[bundle])?.remove(0))
    }

    pub fn predict_batch(&self, bundles: &[&FeatureBundle]) -> Result<Vec<Prediction>> {
        match self {
            AnyModel::Diet(m) => m.predict_batch(bundles),
            AnyModel::TfBaseline(m) => m.predict_batch(bundles),
            AnyModel::EmbedBaseline(m) => m.predict_batch(bundles),
        }
    }

    /// Loss of one example. With `backward`, gradients of `scale * loss`
    /// are accumulated into the parameters.
    pub fn example_loss(
        &mut self,
        ex: &Example,
        rng: &mut dyn RngCore,
        backward: bool,
        scale: f64,
    ) -> Result<LossParts> {
        match self {
            AnyModel::Diet(m) => m.total_loss(&ex.bundle, ex.intent, Some(&ex.tags), rng, backward, scale),
            AnyModel::TfBaseline(m) => m.loss(&ex.bundle, ex.intent, rng, backward, scale),
            AnyModel::EmbedBaseline(m) => m.loss(&ex.bundle, ex.intent, rng, backward, scale),
        }
    }
}

impl HasParams for AnyModel {
    fn params(&self) -> Vec<&Param> {
        match self {
            AnyModel::Diet(m) => m.params(),
            AnyModel::TfBaseline(m) => m.params(),
            AnyModel::EmbedBaseline(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            AnyModel::Diet(m) => m.params_mut(),
            AnyModel::TfBaseline(m) => m.params_mut(),
            AnyModel::EmbedBaseline(m) => m.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips_through_strings() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert_eq!("tf-baseline".parse::<ModelKind>().unwrap(), ModelKind::TfBaseline);
        assert!("bert".parse::<ModelKind>().is_err());
    }

    #[test]
    fn ranking_ties_keep_inventory_order() {
        let intents: Vec<String> = ["affirm", "counting", "deny"].iter().map(|s| s.to_string()).collect();
        let r = rank_intents(&intents, &[1.0 / 3.0; 3]);
        let names: Vec<&str> = r.iter().map(|x| x.intent.as_str()).collect();
        assert_eq!(names, ["affirm", "counting", "deny"]);
        let r = rank_intents(&intents, &[0.2, 0.5, 0.3]);
        assert_eq!(r[0].intent, "counting");
        assert_eq!(r[2].intent, "affirm");
    }
}
