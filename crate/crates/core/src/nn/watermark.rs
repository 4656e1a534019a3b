use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{forward, sigmoid, ModelWeights};
use super::spec::ModelSpec;
use super::NnError;
use crate::fixed::ber_threshold;

/// The owner's secret: trigger inputs, projection matrix and signature, plus
/// the (public) BER tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    /// Trigger inputs `X^key`, each a flat model input.
    pub triggers: Vec<Vec<f64>>,
    /// Projection `A`, `M x N` row-major, where `M` is the activation width
    /// at `layer` and `N` the signature length.
    pub projection: Vec<f64>,
    pub bits: Vec<bool>,
    /// Activation index the signature lives in: 0 is the input, `i` the
    /// output of layer `i`.
    pub layer: usize,
    pub class: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyConfig {
    pub class: usize,
    pub bits: usize,
    pub layer: usize,
    pub theta: f64,
}

impl Default for KeyConfig {
    fn default() -> Self {
        Self { class: 0, bits: 32, layer: 1, theta: 0.0 }
    }
}

/// Number of triggers drawn from a class of `class_size` examples.
pub fn trigger_count(class_size: usize) -> usize {
    16.max(class_size.div_ceil(100))
}

impl WatermarkKey {
    /// Draws triggers from class `cfg.class` of `data`, a Gaussian
    /// projection and uniformly random signature bits.
    pub fn generate(spec: &ModelSpec, data: &Dataset, cfg: &KeyConfig, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut members = data.indices_of_class(cfg.class);
        let count = trigger_count(members.len());
        if members.len() < count {
            return Err(NnError::InvalidKey(format!(
                "class {} has {} examples, need at least {count} triggers",
                cfg.class,
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        members.truncate(count);
        members.sort_unstable();
        let triggers = members.iter().map(|&i| data.inputs[i].clone()).collect();
        Self::with_triggers(spec, triggers, cfg, &mut rng)
    }

    /// A key around caller-supplied triggers with fresh projection and bits.
    ///
    /// Projection entries are `N(0, 1/M)`, which keeps `mean x A` on the
    /// scale of a single activation so the in-circuit sigmoid polynomial
    /// stays far from fixed-point overflow.
    pub fn with_triggers(spec: &ModelSpec, triggers: Vec<Vec<f64>>, cfg: &KeyConfig, rng: &mut impl Rng) -> Result<Self, NnError> {
        let m = spec
            .shapes()
            .get(cfg.layer)
            .ok_or_else(|| NnError::InvalidKey(format!("layer {} does not exist", cfg.layer)))?
            .len();
        let scale = 1.0 / (m as f64).sqrt();
        let projection = (0..m * cfg.bits)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        let bits = (0..cfg.bits).map(|_| rng.gen()).collect();
        let key = Self { triggers, projection, bits, layer: cfg.layer, class: cfg.class, theta: cfg.theta };
        key.check(spec)?;
        Ok(key)
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.len() / self.bits.len().max(1)
    }

    /// `floor(theta * B)`, the largest accepted mismatch count.
    pub fn max_mismatches(&self) -> usize {
        ber_threshold(self.theta, self.bits.len())
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidKey(msg));
        if self.triggers.is_empty() {
            return bad("no trigger inputs".into());
        }
        if self.bits.is_empty() {
            return bad("empty signature".into());
        }
        if !(0.0..1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1)", self.theta));
        }
        if self.layer == 0 || self.layer > spec.layers().len() {
            return bad(format!("layer {} is not in 1..={}", self.layer, spec.layers().len()));
        }
        let input = spec.input().len();
        if let Some(t) = self.triggers.iter().find(|t| t.len() != input) {
            return bad(format!("trigger has {} values, model input is {input}", t.len()));
        }
        let m = spec.shapes()[self.layer].len();
        if self.projection.len() != m * self.bits.len() {
            return bad(format!(
                "projection has {} entries, expected {m}x{}",
                self.projection.len(),
                self.bits.len()
            ));
        }
        Ok(())
    }
}

/// Every intermediate of a plaintext extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionTrace {
    /// Activations at the key's layer, one row per trigger.
    pub activations: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// `mean x A` before the sigmoid.
    pub logits: Vec<f64>,
    /// `sigmoid(mean x A)`.
    pub projected: Vec<f64>,
    pub extracted: Vec<bool>,
    pub mismatches: usize,
    pub ber: f64,
}

impl ExtractionTrace {
    pub fn valid(&self, key: &WatermarkKey) -> bool {
        self.mismatches <= key.max_mismatches()
    }
}

/// Real-arithmetic extraction with the exact logistic sigmoid.
pub fn extract_plaintext(spec: &ModelSpec, weights: &ModelWeights, key: &WatermarkKey) -> Result<ExtractionTrace, NnError> {
    weights.check(spec)?;
    key.check(spec)?;
    let activations: Vec<Vec<f64>> = key
        .triggers
        .iter()
        .map(|x| forward(spec, weights, x, key.layer).pop().unwrap())
        .collect();
    let m = key.feature_dim();
    let n = key.bits.len();
    let k = activations.len() as f64;
    let mean: Vec<f64> = (0..m).map(|j| activations.iter().map(|a| a[j]).sum::<f64>() / k).collect();
    let logits: Vec<f64> = (0..n).map(|j| (0..m).map(|i| mean[i] * key.projection[i * n + j]).sum()).collect();
    let projected: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let extracted: Vec<bool> = projected.iter().map(|&g| g >= 0.5).collect();
    let mismatches = extracted.iter().zip(&key.bits).filter(|(a, b)| a != b).count();
    Ok(ExtractionTrace { activations, mean, logits, projected, extracted, mismatches, ber: mismatches as f64 / n as f64 })
}

#[derive(Serialize, Deserialize)]
struct Matrix {
    rows: usize,
    cols: usize,
    /// Little-endian f64 values, row-major, base64.
    data: String,
}

impl Matrix {
    fn encode(rows: usize, cols: usize, values: impl Iterator<Item = f64>) -> Self {
        let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
        Self { rows, cols, data: BASE64.encode(bytes) }
    }

    fn decode(&self, what: &str) -> Result<Vec<f64>, NnError> {
        let bytes = BASE64.decode(&self.data).map_err(|e| NnError::InvalidKey(format!("{what}: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(NnError::InvalidKey(format!("{what}: {} bytes for {}x{}", bytes.len(), self.rows, self.cols)));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u32,
    class: usize,
    layer: usize,
    bits: usize,
    theta: f64,
    triggers: Matrix,
    projection: Matrix,
    /// Signature bits packed most significant first.
    watermark: String,
}

impl WatermarkKey {
    pub fn to_json(&self) -> String {
        let d = self.triggers.first().map_or(0, Vec::len);
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            packed[i / 8] |= (b as u8) << (7 - i % 8);
        }
        let file = KeyFile {
            version: 1,
            class: self.class,
            layer: self.layer,
            bits: self.bits.len(),
            theta: self.theta,
            triggers: Matrix::encode(self.triggers.len(), d, self.triggers.iter().flatten().copied()),
            projection: Matrix::encode(self.feature_dim(), self.bits.len(), self.projection.iter().copied()),
            watermark: hex::encode(packed),
        };
        serde_json::to_string_pretty(&file).expect("key serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: KeyFile = serde_json::from_str(text).map_err(|e| NnError::InvalidKey(e.to_string()))?;
        if file.version != 1 {
            return Err(NnError::InvalidKey(format!("unsupported key version {}", file.version)));
        }
        let packed = hex::decode(&file.watermark).map_err(|e| NnError::InvalidKey(format!("watermark: {e}")))?;
        if packed.len() != file.bits.div_ceil(8) {
            return Err(NnError::InvalidKey(format!("watermark has {} bytes for {} bits", packed.len(), file.bits)));
        }
        let bits = (0..file.bits).map(|i| packed[i / 8] >> (7 - i % 8) & 1 == 1).collect();
        if file.projection.cols != file.bits {
            return Err(NnError::InvalidKey("projection columns differ from signature length".into()));
        }
        let flat = file.triggers.decode("triggers")?;
        let triggers = if file.triggers.cols == 0 {
            Vec::new()
        } else {
            flat.chunks_exact(file.triggers.cols).map(<[f64]>::to_vec).collect()
        };
        Ok(Self {
            triggers,
            projection: file.projection.decode("projection")?,
            bits,
            layer: file.layer,
            class: file.class,
            theta: file.theta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::blobs;

    fn setup() -> (ModelSpec, Dataset) {
        ("8-FC(6)-ReLU-FC(3)".parse().unwrap(), blobs(40, 8, 3, 1.0, 2))
    }

    #[test]
    fn trigger_count_rule() {
        assert_eq!(trigger_count(10), 16);
        assert_eq!(trigger_count(1600), 16);
        assert_eq!(trigger_count(1601), 17);
        assert_eq!(trigger_count(5000), 50);
    }

    #[test]
    fn generated_key_round_trips_through_json() {
        let (spec, data) = setup();
        let cfg = KeyConfig { class: 2, bits: 11, layer: 2, theta: 0.25 };
        let key = WatermarkKey::generate(&spec, &data, &cfg, 8).unwrap();
        assert_eq!(key.triggers.len(), 16);
        assert_eq!(key.feature_dim(), 6);
        assert!(key.triggers.iter().all(|t| data.inputs.iter().position(|x| x == t).map(|i| data.labels[i]) == Some(2)));
        let back = WatermarkKey::from_json(&key.to_json()).unwrap();
        assert_eq!(back, key);
        assert_eq!(WatermarkKey::generate(&spec, &data, &cfg, 8).unwrap(), key);
    }

    #[test]
    fn key_validation() {
        let (spec, data) = setup();
        let mut key = WatermarkKey::generate(&spec, &data, &KeyConfig::default(), 1).unwrap();
        assert!(key.check(&spec).is_ok());
        key.theta = 1.0;
        assert!(key.check(&spec).is_err());
        key.theta = 0.0;
        key.layer = 9;
        assert!(key.check(&spec).is_err());
        assert!(WatermarkKey::generate(&spec, &blobs(5, 8, 3, 1.0, 2), &KeyConfig::default(), 1).is_err());
        assert!(WatermarkKey::from_json("{}").is_err());
    }

    #[test]
    fn extraction_ber_counts_mismatches() {
        let (spec, data) = setup();
        let weights = ModelWeights::init(&spec, 4);
        let mut key = WatermarkKey::generate(&spec, &data, &KeyConfig { bits: 8, ..KeyConfig::default() }, 3).unwrap();
        let trace = extract_plaintext(&spec, &weights, &key).unwrap();
        key.bits = trace.extracted.clone();
        let exact = extract_plaintext(&spec, &weights, &key).unwrap();
        assert_eq!((exact.mismatches, exact.ber), (0, 0.0));
        key.bits[0] = !key.bits[0];
        key.bits[5] = !key.bits[5];
        let two = extract_plaintext(&spec, &weights, &key).unwrap();
        assert_eq!((two.mismatches, two.ber), (2, 0.25));
        assert!(!two.valid(&key));
        key.theta = 0.25;
        assert!(two.valid(&key));
    }
}
