//! Model file: `u32` little-endian header length, a JSON header, then every
//! layer's weights followed by its biases as little-endian `f64`.

use serde::{Deserialize, Serialize};

use super::model::{LayerParams, ModelWeights};
use super::spec::ModelSpec;
use super::train::{EmbedConfig, TrainConfig};
use super::NnError;
use crate::fixed::FixedPointFormat;

/// How a model file was produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbedConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub weights: ModelWeights,
    /// Fixed-point format circuits for this model are compiled with.
    pub format: FixedPointFormat,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct LayerShape {
    weights: usize,
    biases: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    format: FixedPointFormat,
    layers: Vec<LayerShape>,
    provenance: Provenance,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: 1,
            spec: self.spec.clone(),
            format: self.format,
            layers: self
                .weights
                .layers
                .iter()
                .map(|p| LayerShape { weights: p.weight.len(), biases: p.bias.len() })
                .collect(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(4 + json.len() + self.weights.num_params() * 8);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.weights.layers {
            for v in p.weight.iter().chain(&p.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::ModelFile(m.to_string());
        let len = bytes.get(..4).ok_or_else(|| bad("truncated header length"))?;
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        let json = bytes.get(4..4 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| NnError::ModelFile(e.to_string()))?;
        if header.version != 1 {
            return Err(NnError::ModelFile(format!("unsupported model version {}", header.version)));
        }
        let mut payload = bytes[4 + len..].chunks_exact(8);
        if !payload.remainder().is_empty() {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let mut take = |n: usize| -> Result<Vec<f64>, NnError> {
            (0..n)
                .map(|_| payload.next().map(|c| f64::from_le_bytes(c.try_into().unwrap())))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated payload"))
        };
        let mut layers = Vec::with_capacity(header.layers.len());
        for shape in &header.layers {
            let weight = take(shape.weights)?;
            let bias = take(shape.biases)?;
            layers.push(LayerParams { weight, bias });
        }
        if payload.next().is_some() {
            return Err(bad("trailing payload"));
        }
        let weights = ModelWeights { layers };
        weights.check(&header.spec)?;
        Ok(Self { spec: header.spec, weights, format: header.format, provenance: header.provenance })
    }
}
