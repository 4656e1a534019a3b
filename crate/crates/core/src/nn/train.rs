use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{backprop, forward, sigmoid, ModelWeights};
use super::spec::ModelSpec;
use super::watermark::WatermarkKey;
use super::NnError;

/// Minibatch SGD with momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, learning_rate: 0.02, momentum: 0.9, seed: 0 }
    }
}

/// Softmax cross-entropy of `logits` against `label`, and its gradient.
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean binary cross-entropy of `sigmoid(mu A)` against `bits`, and its
/// gradient with respect to `mu`. `A` is `M x N` row-major.
pub(crate) fn projection_bce(mu: &[f64], a: &[f64], bits: &[bool]) -> (f64, Vec<f64>) {
    let n = bits.len();
    let mut loss = 0.0;
    let mut dz = vec![0.0; n];
    for (j, &bit) in bits.iter().enumerate() {
        let z: f64 = mu.iter().enumerate().map(|(m, &x)| x * a[m * n + j]).sum();
        // log(1 + e^-z) for target 1, log(1 + e^z) for target 0, computed
        // without overflow.
        let signed = if bit { z } else { -z };
        loss += (-signed).max(0.0) + (-signed.abs()).exp().ln_1p();
        dz[j] = (sigmoid(z) - bit as u8 as f64) / n as f64;
    }
    let grad = (0..mu.len()).map(|m| (0..n).map(|j| a[m * n + j] * dz[j]).sum()).collect();
    (loss / n as f64, grad)
}

pub fn predict(spec: &ModelSpec, weights: &ModelWeights, x: &[f64]) -> usize {
    let acts = forward(spec, weights, x, spec.layers().len());
    let logits = acts.last().unwrap();
    (0..logits.len()).fold(0, |best, i| if logits[i] > logits[best] { i } else { best })
}

pub fn accuracy(spec: &ModelSpec, weights: &ModelWeights, data: &Dataset) -> f64 {
    let hits = data.inputs.iter().zip(&data.labels).filter(|(x, &y)| predict(spec, weights, x) == y).count();
    hits as f64 / data.len() as f64
}

fn check_data(spec: &ModelSpec, data: &Dataset) -> Result<(), NnError> {
    if data.dim() != spec.input().len() {
        return Err(NnError::ShapeMismatch(format!("dataset has {} features, model expects {}", data.dim(), spec.input().len())));
    }
    if data.num_classes > spec.num_classes() {
        return Err(NnError::ShapeMismatch(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes,
            spec.num_classes()
        )));
    }
    Ok(())
}

/// Trains from a seeded He initialization. Zero epochs returns the
/// initialization.
pub fn train_baseline(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<ModelWeights, NnError> {
    check_data(spec, data)?;
    let weights = ModelWeights::init(spec, cfg.seed);
    run(spec, weights, data, cfg, None)
}

/// Watermark regularizer settings for [`embed_watermark`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub lambda: f64,
    pub train: TrainConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { lambda: 1.0, train: TrainConfig { epochs: 20, learning_rate: 0.01, ..TrainConfig::default() } }
    }
}

/// Fine-tunes with `CE + lambda * BCE(sigmoid(mu A), wm)`, where `mu` is the
/// mean activation at the key's layer over the key's triggers, recomputed
/// at every step.
pub fn embed_watermark(
    spec: &ModelSpec,
    weights: &ModelWeights,
    data: &Dataset,
    key: &WatermarkKey,
    cfg: &EmbedConfig,
) -> Result<ModelWeights, NnError> {
    check_data(spec, data)?;
    weights.check(spec)?;
    key.check(spec)?;
    run(spec, weights.clone(), data, &cfg.train, Some((key, cfg.lambda)))
}

fn run(
    spec: &ModelSpec,
    mut weights: ModelWeights,
    data: &Dataset,
    cfg: &TrainConfig,
    watermark: Option<(&WatermarkKey, f64)>,
) -> Result<ModelWeights, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity = ModelWeights::zeros(spec);
    let mut grads = ModelWeights::zeros(spec);
    let depth = spec.layers().len();
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grads.fill(0.0);
            let mut loss = 0.0;
            for &i in chunk {
                let acts = forward(spec, &weights, &data.inputs[i], depth);
                let (l, g) = cross_entropy(acts.last().unwrap(), data.labels[i]);
                loss += l / chunk.len() as f64;
                let g = g.into_iter().map(|v| v / chunk.len() as f64).collect();
                backprop(spec, &weights, &acts, depth, g, &mut grads);
            }
            if let Some((key, lambda)) = watermark.filter(|(_, l)| *l != 0.0) {
                loss += lambda * watermark_step(spec, &weights, key, lambda, &mut grads);
            }
            if !loss.is_finite() {
                return Err(NnError::DivergenceDetected { epoch });
            }
            for ((p, v), g) in weights.layers.iter_mut().zip(&mut velocity.layers).zip(&grads.layers) {
                for ((w, v), g) in p.weight.iter_mut().zip(&mut v.weight).zip(&g.weight) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g;
                    *w += *v;
                }
                for ((b, v), g) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g;
                    *b += *v;
                }
            }
        }
    }
    Ok(weights)
}

/// Adds `lambda * dBCE/dtheta` to `grads` and returns the unscaled BCE.
fn watermark_step(spec: &ModelSpec, weights: &ModelWeights, key: &WatermarkKey, lambda: f64, grads: &mut ModelWeights) -> f64 {
    let layer = key.layer;
    let traces: Vec<Vec<Vec<f64>>> = key.triggers.iter().map(|x| forward(spec, weights, x, layer)).collect();
    let k = traces.len() as f64;
    let m = key.feature_dim();
    let mut mu = vec![0.0; m];
    for t in &traces {
        for (acc, &v) in mu.iter_mut().zip(&t[layer]) {
            *acc += v / k;
        }
    }
    let (loss, dmu) = projection_bce(&mu, &key.projection, &key.bits);
    let per_trigger: Vec<f64> = dmu.iter().map(|g| lambda * g / k).collect();
    for t in &traces {
        backprop(spec, weights, t, layer, per_trigger.clone(), grads);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::blobs;

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = cross_entropy(&[1.0, 2.0, 0.5], 1);
        assert!(loss > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[1] < 0.0);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mu = [0.3, -1.2, 0.8];
        let a = [0.5, -0.4, 1.1, 0.2, -0.7, 0.9];
        let bits = [true, false];
        let (_, g) = projection_bce(&mu, &a, &bits);
        for m in 0..3 {
            let mut p = mu;
            let mut q = mu;
            p[m] += 1e-6;
            q[m] -= 1e-6;
            let num = (projection_bce(&p, &a, &bits).0 - projection_bce(&q, &a, &bits).0) / 2e-6;
            assert!((num - g[m]).abs() < 1e-8);
        }
        // Extreme logits stay finite.
        assert!(projection_bce(&[1e4], &[1.0], &[false]).0.is_finite());
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let spec: ModelSpec = "16-FC(8)-ReLU-FC(2)".parse().unwrap();
        let data = blobs(100, 16, 2, 1.0, 11);
        let cfg = TrainConfig { epochs: 5, seed: 3, ..TrainConfig::default() };
        let w = train_baseline(&spec, &data, &cfg).unwrap();
        assert!(accuracy(&spec, &w, &data) >= 0.95);
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let spec: ModelSpec = "8-FC(4)-ReLU-FC(3)".parse().unwrap();
        let data = blobs(20, 8, 3, 1.0, 1);
        let zero = TrainConfig { epochs: 0, seed: 42, ..TrainConfig::default() };
        assert_eq!(train_baseline(&spec, &data, &zero).unwrap(), ModelWeights::init(&spec, 42));
        let cfg = TrainConfig { epochs: 3, seed: 42, ..TrainConfig::default() };
        assert_eq!(train_baseline(&spec, &data, &cfg).unwrap(), train_baseline(&spec, &data, &cfg).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let spec: ModelSpec = "8-FC(4)-ReLU-FC(3)".parse().unwrap();
        let data = blobs(20, 8, 3, 1.0, 1);
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e200, ..TrainConfig::default() };
        assert!(matches!(train_baseline(&spec, &data, &cfg), Err(NnError::DivergenceDetected { .. })));
    }
}
