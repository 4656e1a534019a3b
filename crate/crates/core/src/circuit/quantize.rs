use serde::Serialize;

use super::CircuitError;
use crate::fixed::{
    average_raw, decode_raw, dot_rescale, encode, hard_threshold_raw, relu_raw, sigmoid_raw, FixedPointFormat,
};
use crate::nn::{extract_plaintext, sigmoid, Layer, LayerParams, ModelSpec, ModelWeights, Shape, WatermarkKey};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuantizedLayer {
    pub weight: Vec<i64>,
    pub bias: Vec<i64>,
}

/// Model weights encoded in a fixed-point format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedModel {
    pub format: FixedPointFormat,
    pub layers: Vec<QuantizedLayer>,
}

fn encode_all(values: &[f64], format: FixedPointFormat) -> Result<Vec<i64>, CircuitError> {
    values.iter().map(|&v| Ok(encode(v, format)?.raw())).collect()
}

impl QuantizedModel {
    pub fn quantize(weights: &ModelWeights, format: FixedPointFormat) -> Result<Self, CircuitError> {
        let layers = weights
            .layers
            .iter()
            .map(|p| Ok(QuantizedLayer { weight: encode_all(&p.weight, format)?, bias: encode_all(&p.bias, format)? }))
            .collect::<Result<_, CircuitError>>()?;
        Ok(Self { format, layers })
    }

    pub fn dequantize(&self) -> ModelWeights {
        let d = |v: &[i64]| v.iter().map(|&r| decode_raw(r as i128, self.format)).collect();
        ModelWeights {
            layers: self.layers.iter().map(|q| LayerParams { weight: d(&q.weight), bias: d(&q.bias) }).collect(),
        }
    }
}

/// The private key inputs in fixed point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedKey {
    pub triggers: Vec<Vec<i64>>,
    pub projection: Vec<i64>,
    pub bits: Vec<bool>,
}

impl QuantizedKey {
    pub fn quantize(key: &WatermarkKey, format: FixedPointFormat) -> Result<Self, CircuitError> {
        Ok(Self {
            triggers: key.triggers.iter().map(|t| encode_all(t, format)).collect::<Result<_, _>>()?,
            projection: encode_all(&key.projection, format)?,
            bits: key.bits.clone(),
        })
    }
}

/// Raw intermediates of the fixed-point extraction, the exact values the
/// circuit witness carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTrace {
    pub activations: Vec<Vec<i64>>,
    pub mean: Vec<i64>,
    pub logits: Vec<i64>,
    pub projected: Vec<i64>,
    pub extracted: Vec<bool>,
    pub mismatches: usize,
}

fn overflow(op: &str) -> CircuitError {
    CircuitError::Overflow(op.to_string())
}

/// One layer of the fixed-point forward pass, mirroring the gadgets.
pub(crate) fn layer_raw(
    layer: &Layer,
    input: Shape,
    q: &QuantizedLayer,
    x: &[i64],
    format: FixedPointFormat,
) -> Result<Vec<i64>, CircuitError> {
    match *layer {
        Layer::Dense(n) => (0..n)
            .map(|j| {
                let col: Vec<i64> = (0..x.len()).map(|i| q.weight[i * n + j]).collect();
                dot_rescale(x, &col, Some(q.bias[j]), format).map_err(CircuitError::from)
            })
            .collect(),
        Layer::Conv3d { out_channels, kernel, stride } => {
            let Shape::Image { height, width, channels } = input else {
                return Err(CircuitError::ShapeMismatch("convolution over a flat input".into()));
            };
            let (oh, ow) = ((height - kernel) / stride + 1, (width - kernel) / stride + 1);
            let patch_len = kernel * kernel * channels;
            let mut out = Vec::with_capacity(oh * ow * out_channels);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut patch = Vec::with_capacity(patch_len);
                    for dy in 0..kernel {
                        for dx in 0..kernel {
                            let base = ((oy * stride + dy) * width + ox * stride + dx) * channels;
                            patch.extend_from_slice(&x[base..base + channels]);
                        }
                    }
                    for o in 0..out_channels {
                        let k = &q.weight[o * patch_len..(o + 1) * patch_len];
                        out.push(dot_rescale(&patch, k, Some(q.bias[o]), format)?);
                    }
                }
            }
            Ok(out)
        }
        Layer::Relu => Ok(x.iter().map(|&v| relu_raw(v)).collect()),
        other => Err(CircuitError::UnsupportedLayer { layer: other.to_string(), index: 0 }),
    }
}

/// Fixed-point extraction with the sigmoid polynomial, bit-exact with the
/// circuit.
pub fn extract_fixed(spec: &ModelSpec, model: &QuantizedModel, key: &QuantizedKey, layer: usize) -> Result<FixedTrace, CircuitError> {
    let fmt = model.format;
    let mut activations = Vec::with_capacity(key.triggers.len());
    for x in &key.triggers {
        let mut a = x.clone();
        for i in 0..layer {
            a = layer_raw(&spec.layers()[i], spec.shapes()[i], &model.layers[i], &a, fmt)
                .map_err(|e| e.at_layer(i + 1))?;
        }
        activations.push(a);
    }
    let mean = average_raw(&activations, fmt)?;
    let n = key.bits.len();
    let logits = (0..n)
        .map(|j| {
            let col: Vec<i64> = (0..mean.len()).map(|i| key.projection[i * n + j]).collect();
            dot_rescale(&mean, &col, None, fmt)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let projected = logits
        .iter()
        .map(|&z| sigmoid_raw(z, fmt).map_err(|_| overflow("sigmoid")))
        .collect::<Result<Vec<_>, _>>()?;
    let extracted = projected
        .iter()
        .map(|&g| hard_threshold_raw(g, 0.5, fmt))
        .collect::<Result<Vec<_>, _>>()?;
    let mismatches = extracted.iter().zip(&key.bits).filter(|(a, b)| a != b).count();
    Ok(FixedTrace { activations, mean, logits, projected, extracted, mismatches })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageDrift {
    pub stage: &'static str,
    pub max_abs: f64,
}

/// Real versus fixed-point extraction, stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub format: FixedPointFormat,
    pub stages: Vec<StageDrift>,
    pub extracted_real: Vec<bool>,
    pub extracted_fixed: Vec<bool>,
    /// Whether the two extracted bit strings differ.
    pub diverged: bool,
}

pub fn quantization_drift_report(
    spec: &ModelSpec,
    weights: &ModelWeights,
    key: &WatermarkKey,
    format: FixedPointFormat,
) -> Result<DriftReport, CircuitError> {
    let real = extract_plaintext(spec, weights, key)?;
    let model = QuantizedModel::quantize(weights, format)?;
    let qkey = QuantizedKey::quantize(key, format)?;
    let fixed = extract_fixed(spec, &model, &qkey, key.layer)?;
    let max_dev = |real: &mut dyn Iterator<Item = f64>, raw: &mut dyn Iterator<Item = i64>| {
        real.zip(raw).map(|(r, q)| (r - decode_raw(q as i128, format)).abs()).fold(0.0, f64::max)
    };
    let stages = vec![
        StageDrift {
            stage: "activations",
            max_abs: max_dev(&mut real.activations.iter().flatten().copied(), &mut fixed.activations.iter().flatten().copied()),
        },
        StageDrift { stage: "mean", max_abs: max_dev(&mut real.mean.iter().copied(), &mut fixed.mean.iter().copied()) },
        StageDrift { stage: "logits", max_abs: max_dev(&mut real.logits.iter().copied(), &mut fixed.logits.iter().copied()) },
        StageDrift {
            stage: "sigmoid",
            max_abs: max_dev(&mut real.logits.iter().map(|&z| sigmoid(z)), &mut fixed.projected.iter().copied()),
        },
    ];
    Ok(DriftReport {
        format,
        stages,
        diverged: real.extracted != fixed.extracted,
        extracted_real: real.extracted,
        extracted_fixed: fixed.extracted,
    })
}
