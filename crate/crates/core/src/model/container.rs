//! Binary model container.
//!
//! Layout: magic `DNLM`, version byte, u32-LE header length, UTF-8 JSON
//! header, then every tensor listed in the header as f64-LE in header order.

use serde::{Deserialize, Serialize};

use super::{AnyModel, DietConfig, DietModel, EmbedBaselineModel, ModelKind, TfBaselineModel};
use crate::error::{Error, Result};
use crate::nn::HasParams;

pub const MODEL_MAGIC: &[u8; 4] = b"DNLM";
pub const MODEL_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub config: DietConfig,
    pub intents: Vec<String>,
    pub tagset: Vec<String>,
    pub sparse_dim: usize,
    pub dense_dim: usize,
    /// Caller-owned data stored alongside the weights (featurizer state,
    /// provider descriptor).
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn write_model(model: &AnyModel, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let (sparse_dim, dense_dim) = match model {
        AnyModel::Diet(m) => (m.sparse_dim, m.dense_dim),
        AnyModel::TfBaseline(m) => (0, m.dense_dim),
        AnyModel::EmbedBaseline(m) => (m.sparse_dim, 0),
    };
    let params = model.params();
    let header = ModelHeader {
        kind: model.kind(),
        config: model.config().clone(),
        intents: model.intents().to_vec(),
        tagset: model.tagset().to_vec(),
        sparse_dim,
        dense_dim,
        metadata,
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let n_values: usize = params.iter().map(|p| p.value.len()).sum();
    let mut out = Vec::with_capacity(9 + json.len() + 8 * n_values);
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    let len = u32::try_from(json.len()).map_err(|_| bad("header too large"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_model(bytes: &[u8]) -> Result<(AnyModel, ModelHeader)> {
    if bytes.len() < 9 || &bytes[..4] != MODEL_MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    if bytes[4] != MODEL_VERSION {
        return Err(bad(format!("unsupported model version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
    let header: ModelHeader = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;

    let cfg = header.config.clone();
    let intents = header.intents.clone();
    let mut model = match header.kind {
        ModelKind::Diet => AnyModel::Diet(DietModel::new(
            cfg,
            header.sparse_dim,
            header.dense_dim,
            intents,
            header.tagset.clone(),
            0,
        )?),
        ModelKind::TfBaseline => AnyModel::TfBaseline(TfBaselineModel::new(cfg, header.dense_dim, intents, 0)?),
        ModelKind::EmbedBaseline => {
            AnyModel::EmbedBaseline(EmbedBaselineModel::new(cfg, header.sparse_dim, intents, 0)?)
        }
    };

    let mut params = model.params_mut();
    if params.len() != header.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, header lists {}",
            params.len(),
            header.tensors.len()
        )));
    }
    let mut data = &bytes[9 + len..];
    for (p, entry) in params.iter_mut().zip(&header.tensors) {
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(bad(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
        let n = p.value.len();
        if data.len() < 8 * n {
            return Err(bad(format!("truncated tensor {}", entry.name)));
        }
        for (v, chunk) in p.value.data_mut().iter_mut().zip(data[..8 * n].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        data = &data[8 * n..];
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    drop(params);
    Ok((model, header))
}
