//! Per-gadget and end-to-end benchmark circuits with setup, prove and
//! verify timings.
//!
//! Standalone gadget circuits take private inputs and expose their outputs
//! as public inputs. Two-dimensional operations use 128x128 operands, one
//! dimensional ones length-128 vectors, and the convolution a 32x32x3 input
//! with 32 kernels of 3x3 at stride 2.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::{backend_for, BackendError, BackendId};
use crate::circuit::{assign, compile, CircuitError, CircuitParams};
use crate::field::FieldScalar;
use crate::fixed::FixedPointFormat;
use crate::gadgets::{
    average, ber_check, conv3d, hard_threshold, matmul, relu, sigmoid, BitVar, CircuitBuilder, Conv3dShape, FxpVar,
    GadgetError,
};
use crate::nn::NnError;
use crate::pipeline::{run_embedding, EmbedRequest};
use crate::r1cs::{Assignment, ConstraintSystem, LinearCombination, Visibility};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unknown benchmark `{0}`")]
    UnknownCircuit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchCircuit {
    MatMult,
    Conv3d,
    Relu,
    Average2d,
    Sigmoid,
    HardThreshold,
    Ber,
    DeskMlp,
}

impl BenchCircuit {
    pub const ALL: [BenchCircuit; 8] = [
        BenchCircuit::MatMult,
        BenchCircuit::Conv3d,
        BenchCircuit::Relu,
        BenchCircuit::Average2d,
        BenchCircuit::Sigmoid,
        BenchCircuit::HardThreshold,
        BenchCircuit::Ber,
        BenchCircuit::DeskMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchCircuit::MatMult => "matmult",
            BenchCircuit::Conv3d => "conv3d",
            BenchCircuit::Relu => "relu",
            BenchCircuit::Average2d => "average2d",
            BenchCircuit::Sigmoid => "sigmoid",
            BenchCircuit::HardThreshold => "hardthreshold",
            BenchCircuit::Ber => "ber",
            BenchCircuit::DeskMlp => "desk-mlp",
        }
    }

    /// Constraint count reported by the original implementation, where a
    /// comparable circuit exists.
    pub fn reference_constraints(self) -> Option<u64> {
        match self {
            BenchCircuit::MatMult => Some(1_097_344),
            BenchCircuit::Conv3d => Some(235_899),
            BenchCircuit::Relu => Some(8_832),
            BenchCircuit::Average2d => Some(545_793),
            BenchCircuit::Sigmoid => Some(454_656),
            BenchCircuit::HardThreshold => Some(8_704),
            BenchCircuit::Ber => Some(8_832),
            BenchCircuit::DeskMlp => None,
        }
    }

    /// Builds the circuit, with a seeded witness when `witness` is set.
    pub fn build(self, seed: u64, witness: bool) -> Result<(ConstraintSystem, Option<Assignment>), BenchError> {
        let fmt = FixedPointFormat::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self as u64);
        let mut b = if witness { CircuitBuilder::with_witness() } else { CircuitBuilder::shape() };
        let mut input = |b: &mut CircuitBuilder, len: usize, range: f64| -> Result<Vec<FxpVar>, GadgetError> {
            (0..len)
                .map(|_| {
                    let raw = (rng.gen_range(-range..=range) * fmt.one_raw() as f64).round() as i64;
                    b.alloc_fxp(Visibility::Private, witness.then_some(raw), fmt)
                })
                .collect()
        };
        match self {
            BenchCircuit::MatMult => {
                let n = 128;
                let a = (0..n).map(|_| input(&mut b, n, 1.0)).collect::<Result<Vec<_>, _>>()?;
                let w = (0..n).map(|_| input(&mut b, n, 1.0)).collect::<Result<Vec<_>, _>>()?;
                let out = matmul(&mut b, &a, &w, None)?;
                expose_all(&mut b, out.iter().flatten())?;
            }
            BenchCircuit::Conv3d => {
                let shape = Conv3dShape { height: 32, width: 32, channels: 3, out_channels: 32, kernel: 3, stride: 2 };
                let x = input(&mut b, 32 * 32 * 3, 1.0)?;
                let k = input(&mut b, 32 * 3 * 3 * 3, 1.0)?;
                let out = conv3d(&mut b, &x, &k, None, shape)?;
                expose_all(&mut b, &out)?;
            }
            BenchCircuit::Relu => {
                let xs = input(&mut b, 128, 4.0)?;
                let out = xs.into_iter().map(|mut x| relu(&mut b, &mut x)).collect::<Result<Vec<_>, _>>()?;
                expose_all(&mut b, &out)?;
            }
            BenchCircuit::Average2d => {
                let rows = (0..128).map(|_| input(&mut b, 128, 4.0)).collect::<Result<Vec<_>, _>>()?;
                let out = average(&mut b, &rows)?;
                expose_all(&mut b, &out)?;
            }
            BenchCircuit::Sigmoid => {
                let xs = input(&mut b, 128, 5.0)?;
                let out = xs.iter().map(|x| sigmoid(&mut b, x)).collect::<Result<Vec<_>, _>>()?;
                expose_all(&mut b, &out)?;
            }
            BenchCircuit::HardThreshold => {
                let xs = input(&mut b, 128, 1.0)?;
                for x in &xs {
                    let bit = hard_threshold(&mut b, x, 0.5)?;
                    expose_bit(&mut b, &bit)?;
                }
            }
            BenchCircuit::Ber => {
                let mut bits = |b: &mut CircuitBuilder| -> Result<Vec<BitVar>, GadgetError> {
                    (0..128).map(|_| b.alloc_bit(Visibility::Private, witness.then(|| rng.gen()))).collect()
                };
                let wm = bits(&mut b)?;
                let wm_hat = bits(&mut b)?;
                let ok = ber_check(&mut b, &wm, &wm_hat, 0.1)?;
                expose_bit(&mut b, &ok)?;
            }
            BenchCircuit::DeskMlp => {
                let out = run_embedding(&EmbedRequest::desk(seed))?;
                let artifact = compile(&out.spec, &CircuitParams::for_key(&out.key, fmt))?;
                let assignment = if witness { Some(assign(&artifact, &out.weights, &out.key)?) } else { None };
                return Ok((artifact.cs, assignment));
            }
        }
        Ok(b.finish())
    }
}

impl FromStr for BenchCircuit {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase();
        Self::ALL.into_iter().find(|c| c.name() == key).ok_or_else(|| BenchError::UnknownCircuit(s.to_string()))
    }
}

fn expose(b: &mut CircuitBuilder, lc: LinearCombination, value: Option<FieldScalar>) -> Result<(), GadgetError> {
    let out = b.alloc(Visibility::Public, value)?;
    b.enforce("expose", lc, LinearCombination::one(), out.into())
}

fn expose_all<'a>(b: &mut CircuitBuilder, xs: impl IntoIterator<Item = &'a FxpVar>) -> Result<(), GadgetError> {
    for x in xs {
        expose(b, x.lc(), x.value.map(FieldScalar::from_i128))?;
    }
    Ok(())
}

fn expose_bit(b: &mut CircuitBuilder, bit: &BitVar) -> Result<(), GadgetError> {
    expose(b, bit.lc(), bit.value.map(FieldScalar::from))
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub backend: BackendId,
    pub seed: u64,
    /// Circuits above this size are synthesized but not set up or proved.
    pub max_prove_constraints: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { backend: BackendId::Groth16, seed: 0, max_prove_constraints: 250_000 }
    }
}

/// One benchmark result. Timing fields are `None` for circuits that were
/// only synthesized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub circuit: &'static str,
    pub backend: String,
    pub constraints: usize,
    pub public_inputs: usize,
    pub private_inputs: usize,
    pub reference_constraints: Option<u64>,
    pub synthesis_s: f64,
    pub setup_s: Option<f64>,
    pub pk_bytes: Option<usize>,
    pub vk_bytes: Option<usize>,
    pub prove_s: Option<f64>,
    pub proof_bytes: Option<usize>,
    pub verify_ms: Option<f64>,
    pub verified: Option<bool>,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

pub fn run_bench(circuit: BenchCircuit, cfg: &BenchConfig) -> Result<BenchRow, BenchError> {
    let (shape, synth) = timed(|| circuit.build(cfg.seed, false));
    let (cs, _) = shape?;
    let stats = cs.stats();
    let mut row = BenchRow {
        circuit: circuit.name(),
        backend: cfg.backend.to_string(),
        constraints: stats.num_constraints,
        public_inputs: stats.num_public,
        private_inputs: stats.num_private,
        reference_constraints: circuit.reference_constraints(),
        synthesis_s: synth.as_secs_f64(),
        setup_s: None,
        pk_bytes: None,
        vk_bytes: None,
        prove_s: None,
        proof_bytes: None,
        verify_ms: None,
        verified: None,
    };
    if stats.num_constraints > cfg.max_prove_constraints {
        return Ok(row);
    }
    let (cs, assignment) = circuit.build(cfg.seed, true)?;
    let assignment = assignment.expect("witness requested");
    let backend = backend_for(cfg.backend, cfg.seed);
    let (keys, setup) = timed(|| backend.setup(&cs));
    let (pk, vk) = keys?;
    let (bundle, prove) = timed(|| backend.prove(&pk, &cs, &assignment));
    let bundle = bundle?;
    let (ok, verify) = timed(|| backend.verify(&vk, &bundle));
    row.setup_s = Some(setup.as_secs_f64());
    row.pk_bytes = Some(pk.to_bytes().len());
    row.vk_bytes = Some(vk.to_bytes().len());
    row.prove_s = Some(prove.as_secs_f64());
    row.proof_bytes = Some(bundle.proof.len());
    row.verify_ms = Some(verify.as_secs_f64() * 1e3);
    row.verified = Some(ok?);
    Ok(row)
}

/// Fixed-width table with the same columns as the JSON rows.
pub fn render_table(rows: &[BenchRow]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    let mut out = String::new();
    writeln!(
        out,
        "{:<14} {:>11} {:>11} {:>8} {:>9} {:>10} {:>9} {:>9} {:>6} {:>10} {:>6}",
        "circuit", "constraints", "reference", "synth s", "setup s", "PK MB", "VK KB", "prove s", "proof", "verify ms", "ok"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<14} {:>11} {:>11} {:>8.2} {:>9} {:>10} {:>9} {:>9} {:>6} {:>10} {:>6}",
            r.circuit,
            r.constraints,
            opt(r.reference_constraints.map(|c| c.to_string())),
            r.synthesis_s,
            opt(r.setup_s.map(|s| format!("{s:.3}"))),
            opt(r.pk_bytes.map(|b| format!("{:.3}", b as f64 / 1e6))),
            opt(r.vk_bytes.map(|b| format!("{:.3}", b as f64 / 1e3))),
            opt(r.prove_s.map(|s| format!("{s:.3}"))),
            opt(r.proof_bytes.map(|b| b.to_string())),
            opt(r.verify_ms.map(|s| format!("{s:.2}"))),
            opt(r.verified.map(|v| v.to_string())),
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_circuits_prove_with_transparent_backend() {
        let cfg = BenchConfig { backend: BackendId::Check, ..BenchConfig::default() };
        for c in [BenchCircuit::Relu, BenchCircuit::HardThreshold, BenchCircuit::Ber, BenchCircuit::Sigmoid] {
            let row = run_bench(c, &cfg).unwrap();
            assert_eq!(row.verified, Some(true), "{}", c.name());
        }
    }

    #[test]
    fn shape_and_witness_builds_agree() {
        for c in [BenchCircuit::Relu, BenchCircuit::Average2d, BenchCircuit::Ber] {
            let (shape, none) = c.build(3, false).unwrap();
            let (full, assignment) = c.build(3, true).unwrap();
            assert!(none.is_none());
            assert_eq!(shape.build_hash(), full.build_hash());
            assert!(full.is_satisfied(&assignment.unwrap()).unwrap().is_ok());
        }
    }

    #[test]
    fn oversized_circuits_are_only_synthesized() {
        let cfg = BenchConfig { backend: BackendId::Check, max_prove_constraints: 10, ..BenchConfig::default() };
        let row = run_bench(BenchCircuit::Relu, &cfg).unwrap();
        assert!(row.setup_s.is_none() && row.verified.is_none());
        assert!(render_table(&[row]).contains("8832"));
    }

    #[test]
    fn groth16_rows_are_deterministic_and_verify_beats_setup() {
        let cfg = BenchConfig::default();
        for c in [BenchCircuit::Ber, BenchCircuit::Relu] {
            let a = run_bench(c, &cfg).unwrap();
            let b = run_bench(c, &cfg).unwrap();
            assert_eq!(a.verified, Some(true));
            assert!(a.verify_ms.unwrap() / 1e3 < a.setup_s.unwrap(), "{a:?}");
            let sizes = |r: &BenchRow| (r.constraints, r.public_inputs, r.private_inputs, r.pk_bytes, r.vk_bytes, r.proof_bytes);
            assert_eq!(sizes(&a), sizes(&b));
        }
    }

    #[test]
    fn names_round_trip() {
        for c in BenchCircuit::ALL {
            assert_eq!(c.name().parse::<BenchCircuit>().unwrap(), c);
        }
        assert!("nope".parse::<BenchCircuit>().is_err());
    }
}
