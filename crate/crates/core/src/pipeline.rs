//! A trained model bundled with the featurizer state it was fitted with.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::featurizer::{
    featurize_text, parse_provider_spec, DenseProvider, FeatureBundle, ProviderDescriptor, SparseSpec,
};
use crate::model::{read_model, write_model, AnyModel, ModelKind, Prediction};

/// Utterances per forward pass during batch prediction.
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FeaturizerMeta {
    sparse: SparseSpec,
    provider: Option<ProviderDescriptor>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: AnyModel,
    pub sparse: SparseSpec,
    /// The dense provider the model consumes, if any.
    pub provider: Option<DenseProvider>,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn intents(&self) -> &[String] {
        self.model.intents()
    }

    pub fn featurize(&self, text: &str) -> Result<FeatureBundle> {
        featurize_text(&self.sparse, self.provider.as_ref(), text)
    }

    pub fn predict_text(&self, text: &str) -> Result<Prediction> {
        self.model.predict(&self.featurize(text)?)
    }

    pub fn predict_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Prediction>> {
        let bundles = texts
            .iter()
            .map(|t| self.featurize(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(bundles.len());
        for chunk in bundles.chunks(PREDICT_CHUNK) {
            let refs: Vec<&FeatureBundle> = chunk.iter().collect();
            out.extend(self.model.predict_batch(&refs)?);
        }
        Ok(out)
    }

    /// Top-1 intent for every utterance of `ds`, in dataset order.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<String>> {
        let texts: Vec<&str> = ds.utterances().iter().map(|u| u.text.as_str()).collect();
        Ok(self
            .predict_texts(&texts)?
            .into_iter()
            .map(|p| p.intent().to_string())
            .collect())
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<EvalReport> {
        EvalReport::new(ds, &self.predict_dataset(ds)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = FeaturizerMeta {
            sparse: self.sparse.clone(),
            provider: self.provider.as_ref().map(DenseProvider::descriptor),
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::ModelFormat(e.to_string()))?;
        write_model(&self.model, meta)
    }

    /// Restores a model. The dense provider is rebuilt from the recorded
    /// source unless `provider` overrides it; either way its fingerprint must
    /// match the one stored at training time.
    pub fn from_bytes(bytes: &[u8], provider: Option<DenseProvider>) -> Result<Self> {
        let (model, header) = read_model(bytes)?;
        let meta: FeaturizerMeta = serde_json::from_value(header.metadata)
            .map_err(|e| Error::ModelFormat(format!("featurizer metadata: {e}")))?;
        let provider = match meta.provider {
            None => {
                if provider.is_some() {
                    log::warn!("model was trained without dense features; ignoring the given provider");
                }
                None
            }
            Some(desc) => {
                let p = match provider {
                    Some(p) => p,
                    None => {
                        let source = desc.source.as_deref().ok_or_else(|| {
                            Error::ProviderMismatch("model needs a dense provider; pass one explicitly".into())
                        })?;
                        parse_provider_spec(source)?.ok_or_else(|| {
                            Error::ProviderMismatch(format!("recorded provider source {source:?} is empty"))
                        })?
                    }
                };
                let got = p.descriptor();
                if got.dim != desc.dim || got.fingerprint != desc.fingerprint || got.kind != desc.kind {
                    return Err(Error::ProviderMismatch(format!(
                        "model expects {:?} dim {} fingerprint {}, provider is {:?} dim {} fingerprint {}",
                        desc.kind, desc.dim, desc.fingerprint, got.kind, got.dim, got.fingerprint
                    )));
                }
                Some(p)
            }
        };
        Ok(TrainedModel {
            model,
            sparse: meta.sparse,
            provider,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, provider: Option<DenseProvider>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, provider)
    }
}
