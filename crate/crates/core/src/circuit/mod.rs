//! Compiles watermark extraction for a given architecture into one
//! constraint system, and generates the matching witness.
//!
//! The circuit evaluates the network prefix up to the key's layer on every
//! trigger, averages the activations, projects the mean, applies the sigmoid
//! polynomial and the `0.5` threshold, and compares the result with the
//! private signature. The single output bit is `check AND valid_ber`.
//!
//! Public inputs, in order: quantized weights and biases of every
//! parameterized layer in the evaluated prefix, the mismatch budget `T`, and
//! the output bit (always last). Private inputs: the triggers, the
//! projection matrix and the signature bits, followed by every intermediate.
//!
//! The evaluated prefix length is part of the circuit's shape, so the
//! compiled circuit reveals which layer carries the watermark.

mod quantize;

pub use quantize::{
    extract_fixed, quantization_drift_report, DriftReport, FixedTrace, QuantizedKey, QuantizedLayer, QuantizedModel,
    StageDrift,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldScalar;
use crate::fixed::{ber_threshold, FixedPointError, FixedPointFormat};
use crate::gadgets::{
    and_all, average, ber_check_against, conv3d, hard_threshold, matmul, relu, sigmoid, BitVar, CircuitBuilder,
    Conv3dShape, FxpVar, GadgetError,
};
use crate::nn::{Layer, ModelSpec, ModelWeights, NnError, Shape, WatermarkKey};
use crate::r1cs::{Assignment, ConstraintSystem, DecodeError, LinearCombination, Stats, Visibility};

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("layer {index} ({layer}) cannot precede the watermark layer in a circuit")]
    UnsupportedLayer { layer: String, index: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid circuit parameters: {0}")]
    InvalidParams(String),
    #[error("fixed-point overflow in {0}")]
    Overflow(String),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Gadget(GadgetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("artifact does not match the rebuilt circuit: {0}")]
    ArtifactMismatch(String),
    #[error("circuit file: {0}")]
    File(String),
}

impl From<GadgetError> for CircuitError {
    fn from(e: GadgetError) -> Self {
        match e {
            GadgetError::Overflow(site) => CircuitError::Overflow(site),
            GadgetError::FixedPoint(e) => CircuitError::FixedPoint(e),
            other => CircuitError::Gadget(other),
        }
    }
}

impl CircuitError {
    pub(crate) fn at_layer(self, index: usize) -> Self {
        match self {
            CircuitError::UnsupportedLayer { layer, .. } => CircuitError::UnsupportedLayer { layer, index },
            other => other,
        }
    }
}

/// Everything the circuit's shape depends on besides the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub format: FixedPointFormat,
    /// Activation index holding the signature (1 = output of the first layer).
    pub layer: usize,
    /// Signature length `B`.
    pub bits: usize,
    pub theta: f64,
    /// Number of trigger inputs.
    pub triggers: usize,
}

impl CircuitParams {
    pub fn for_key(key: &WatermarkKey, format: FixedPointFormat) -> Self {
        Self { format, layer: key.layer, bits: key.bits.len(), theta: key.theta, triggers: key.triggers.len() }
    }

    /// `floor(theta * B)`.
    pub fn threshold(&self) -> usize {
        ber_threshold(self.theta, self.bits)
    }
}

/// A named, contiguous run of input variables within one visibility class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitMetadata {
    pub spec: ModelSpec,
    pub params: CircuitParams,
    /// `floor(theta * B)`, pinned as a public input.
    pub threshold: usize,
    pub public_layout: Vec<LayoutEntry>,
    pub witness_layout: Vec<LayoutEntry>,
    pub stats: Stats,
    /// Hex SHA-256 of the encoded constraint system.
    pub build_hash: String,
}

impl CircuitMetadata {
    /// Index of the output bit among the public inputs.
    pub fn output_index(&self) -> usize {
        self.stats.num_public - 1
    }
}

#[derive(Debug, Clone)]
pub struct CircuitArtifact {
    pub cs: ConstraintSystem,
    pub metadata: CircuitMetadata,
}

/// Emits the extraction circuit for `spec` with no witness values.
pub fn compile(spec: &ModelSpec, params: &CircuitParams) -> Result<CircuitArtifact, CircuitError> {
    let (cs, _, metadata) = build(spec, params, None)?;
    Ok(CircuitArtifact { cs, metadata })
}

/// Honest witness for `artifact` from the model weights and the key.
///
/// The assignment satisfies the system whenever every fixed-point value
/// stays in range; its output bit is the fixed-point extractor's verdict.
pub fn assign(artifact: &CircuitArtifact, weights: &ModelWeights, key: &WatermarkKey) -> Result<Assignment, CircuitError> {
    let meta = &artifact.metadata;
    let spec = &meta.spec;
    weights.check(spec)?;
    key.check(spec)?;
    let key_params = CircuitParams::for_key(key, meta.params.format);
    if key_params != meta.params {
        return Err(CircuitError::InvalidParams(format!(
            "key (layer {}, {} bits, theta {}, {} triggers) does not match the circuit (layer {}, {} bits, theta {}, {} triggers)",
            key_params.layer, key_params.bits, key_params.theta, key_params.triggers,
            meta.params.layer, meta.params.bits, meta.params.theta, meta.params.triggers
        )));
    }
    let model = QuantizedModel::quantize(weights, meta.params.format)?;
    let qkey = QuantizedKey::quantize(key, meta.params.format)?;
    let (cs, assignment, _) = build(spec, &meta.params, Some((&model, &qkey)))?;
    if cs.stats() != meta.stats {
        return Err(CircuitError::ArtifactMismatch(format!("{:?} vs {:?}", cs.stats(), meta.stats)));
    }
    Ok(assignment.expect("witness mode"))
}

/// Public input values for `weights` under `metadata`, excluding the
/// output bit. Lets a verifier check which model a proof speaks about.
pub fn expected_public_inputs(metadata: &CircuitMetadata, weights: &ModelWeights) -> Result<Vec<FieldScalar>, CircuitError> {
    weights.check(&metadata.spec)?;
    let model = QuantizedModel::quantize(weights, metadata.params.format)?;
    let mut out = Vec::new();
    for q in &model.layers[..metadata.params.layer] {
        out.extend(q.weight.iter().chain(&q.bias).map(|&r| FieldScalar::from_i128(r as i128)));
    }
    out.push(FieldScalar::from_u64(metadata.threshold as u64));
    Ok(out)
}

fn validate(spec: &ModelSpec, params: &CircuitParams) -> Result<(), CircuitError> {
    let bad = |m: String| Err(CircuitError::InvalidParams(m));
    if params.layer == 0 || params.layer > spec.layers().len() {
        return bad(format!("layer {} is not in 1..={}", params.layer, spec.layers().len()));
    }
    if params.bits == 0 {
        return bad("signature length must be positive".into());
    }
    if params.triggers == 0 {
        return bad("need at least one trigger".into());
    }
    if !(0.0..1.0).contains(&params.theta) {
        return bad(format!("theta {} outside [0, 1)", params.theta));
    }
    for (i, layer) in spec.layers()[..params.layer].iter().enumerate() {
        if !matches!(layer, Layer::Dense(_) | Layer::Conv3d { .. } | Layer::Relu) {
            return Err(CircuitError::UnsupportedLayer { layer: layer.to_string(), index: i + 1 });
        }
    }
    Ok(())
}

struct Layout {
    entries: Vec<LayoutEntry>,
    next: usize,
}

impl Layout {
    fn new() -> Self {
        Self { entries: Vec::new(), next: 0 }
    }

    fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let len = shape.iter().product();
        self.entries.push(LayoutEntry { name: name.into(), start: self.next, len, shape });
        self.next += len;
    }
}

fn shape_dims(s: Shape) -> Vec<usize> {
    match s {
        Shape::Flat(n) => vec![n],
        Shape::Image { height, width, channels } => vec![height, width, channels],
    }
}

type Witness<'a> = Option<(&'a QuantizedModel, &'a QuantizedKey)>;

fn build(
    spec: &ModelSpec,
    params: &CircuitParams,
    witness: Witness<'_>,
) -> Result<(ConstraintSystem, Option<Assignment>, CircuitMetadata), CircuitError> {
    validate(spec, params)?;
    let fmt = params.format;
    let mut b = if witness.is_some() { CircuitBuilder::with_witness() } else { CircuitBuilder::shape() };
    let mut public = Layout::new();
    let mut private = Layout::new();
    let input_len = spec.input().len();
    let m = spec.shapes()[params.layer].len();
    let n = params.bits;

    if let Some((model, key)) = witness {
        let bad = |m: String| Err(CircuitError::ShapeMismatch(m));
        if model.layers.len() != spec.layers().len() {
            return bad("quantized model has the wrong number of layers".into());
        }
        if key.triggers.len() != params.triggers || key.bits.len() != n || key.projection.len() != m * n {
            return bad("quantized key does not match the circuit parameters".into());
        }
        if key.triggers.iter().any(|t| t.len() != input_len) {
            return bad("trigger length does not match the model input".into());
        }
    }

    // Public: prefix weights.
    b.push_scope("weights");
    let mut params_vars: Vec<Option<(Vec<FxpVar>, Vec<FxpVar>)>> = Vec::new();
    for (i, layer) in spec.layers()[..params.layer].iter().enumerate() {
        if !layer.has_params() {
            params_vars.push(None);
            continue;
        }
        let (wl, bl) = layer.param_lens(spec.shapes()[i]);
        let q = witness.map(|(model, _)| &model.layers[i]);
        if let Some(q) = q {
            if q.weight.len() != wl || q.bias.len() != bl {
                return Err(CircuitError::ShapeMismatch(format!("layer {} parameters", i + 1)));
            }
        }
        let mut alloc = |raw: Option<i64>| b.alloc_fxp(Visibility::Public, raw, fmt);
        let w = (0..wl).map(|j| alloc(q.map(|q| q.weight[j]))).collect::<Result<Vec<_>, _>>()?;
        let bias = (0..bl).map(|j| alloc(q.map(|q| q.bias[j]))).collect::<Result<Vec<_>, _>>()?;
        let shape = match *layer {
            Layer::Dense(out) => vec![spec.shapes()[i].len(), out],
            Layer::Conv3d { out_channels, kernel, .. } => vec![out_channels, kernel, kernel, wl / (out_channels * kernel * kernel)],
            _ => unreachable!(),
        };
        public.push(format!("layer{}.weight", i + 1), shape);
        public.push(format!("layer{}.bias", i + 1), vec![bl]);
        params_vars.push(Some((w, bias)));
    }
    b.pop_scope();

    // Public: mismatch budget, pinned to its compile-time value.
    let t = params.threshold();
    let t_fs = FieldScalar::from_u64(t as u64);
    let t_var = b.alloc(Visibility::Public, witness.map(|_| t_fs))?;
    b.enforce("threshold", t_var.into(), LinearCombination::one(), LinearCombination::constant(t_fs))?;
    public.push("threshold", vec![1]);

    // Private inputs.
    b.push_scope("inputs");
    let mut triggers = Vec::with_capacity(params.triggers);
    for k in 0..params.triggers {
        let row = (0..input_len)
            .map(|j| b.alloc_fxp(Visibility::Private, witness.map(|(_, key)| key.triggers[k][j]), fmt))
            .collect::<Result<Vec<_>, _>>()?;
        triggers.push(row);
    }
    private.push("triggers", [vec![params.triggers], shape_dims(spec.input())].concat());
    let projection: Vec<Vec<FxpVar>> = (0..m)
        .map(|i| {
            (0..n)
                .map(|j| b.alloc_fxp(Visibility::Private, witness.map(|(_, key)| key.projection[i * n + j]), fmt))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    private.push("projection", vec![m, n]);
    let wm: Vec<BitVar> = (0..n)
        .map(|j| b.alloc_bit(Visibility::Private, witness.map(|(_, key)| key.bits[j])))
        .collect::<Result<_, _>>()?;
    private.push("watermark", vec![n]);
    b.pop_scope();

    // Feed-forward up to the watermark layer.
    let mut acts = triggers;
    for (i, layer) in spec.layers()[..params.layer].iter().enumerate() {
        b.push_scope(format!("layer{}", i + 1));
        let input = spec.shapes()[i];
        acts = match (*layer, &params_vars[i]) {
            (Layer::Dense(out), Some((w, bias))) => {
                let rows: Vec<Vec<FxpVar>> = w.chunks(out).map(<[FxpVar]>::to_vec).collect();
                matmul(&mut b, &acts, &rows, Some(bias))?
            }
            (Layer::Conv3d { out_channels, kernel, stride }, Some((w, bias))) => {
                let Shape::Image { height, width, channels } = input else { unreachable!() };
                let shape = Conv3dShape { height, width, channels, out_channels, kernel, stride };
                acts.iter().map(|a| conv3d(&mut b, a, w, Some(bias), shape)).collect::<Result<_, _>>()?
            }
            (Layer::Relu, None) => acts
                .into_iter()
                .map(|row| row.into_iter().map(|mut x| relu(&mut b, &mut x)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<_, _>>()?,
            _ => unreachable!("validated layer kinds"),
        };
        b.pop_scope();
    }

    b.push_scope("extract");
    let mean = average(&mut b, &acts)?;
    let logits = matmul(&mut b, &[mean], &projection, None)?.pop().unwrap();
    let mut extracted = Vec::with_capacity(n);
    for z in &logits {
        let g = sigmoid(&mut b, z)?;
        extracted.push(hard_threshold(&mut b, &g, 0.5)?);
    }
    let valid = ber_check_against(&mut b, &wm, &extracted, t_var.into(), witness.map(|_| t as i128))?;
    // No gadget exposes a well-formedness bit (range and booleanity checks
    // are hard constraints), so `check` is the empty conjunction.
    let (check, _) = and_all(&mut b, &[])?;
    b.pop_scope();

    let out_value = valid.value;
    let out = b.alloc(Visibility::Public, out_value.map(FieldScalar::from))?;
    b.enforce("output", check, valid.lc(), out.into())?;
    b.enforce_boolean(&BitVar { var: out, value: out_value })?;
    public.push("output", vec![1]);

    let num_private = b.cs().num_private();
    private.push("intermediates", vec![num_private - private.next]);

    let (cs, assignment) = b.finish();
    debug_assert_eq!(public.next, cs.num_public());
    let metadata = CircuitMetadata {
        spec: spec.clone(),
        params: *params,
        threshold: t,
        public_layout: public.entries,
        witness_layout: private.entries,
        stats: cs.stats(),
        build_hash: hex::encode(cs.build_hash()),
    };
    Ok((cs, assignment, metadata))
}

impl CircuitArtifact {
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    /// Writes the encoded system to `path` and metadata to `path.json`.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.cs.to_bytes())?;
        let json = serde_json::to_string_pretty(&self.metadata).expect("metadata serializes");
        std::fs::write(Self::sidecar_path(path), json)
    }

    pub fn load(path: &Path) -> Result<Self, CircuitError> {
        let io = |p: &Path, e: std::io::Error| CircuitError::File(format!("{}: {e}", p.display()));
        let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
        let sidecar = Self::sidecar_path(path);
        let json = std::fs::read_to_string(&sidecar).map_err(|e| io(&sidecar, e))?;
        let cs = ConstraintSystem::from_bytes(&bytes).map_err(|e: DecodeError| CircuitError::File(e.to_string()))?;
        let metadata: CircuitMetadata = serde_json::from_str(&json).map_err(|e| CircuitError::File(e.to_string()))?;
        if hex::encode(cs.build_hash()) != metadata.build_hash {
            return Err(CircuitError::ArtifactMismatch("sidecar build hash differs from the constraint system".into()));
        }
        Ok(Self { cs, metadata })
    }
}
