//! Setup / prove / verify over a finalized [`ConstraintSystem`].
//!
//! Two implementations share one contract:
//!
//! * [`Transparent`] re-evaluates the constraint system. The proof carries
//!   the private witness in the clear, so it is **not zero-knowledge** and
//!   exists only as a testing oracle.
//! * [`Groth16`] adapts the system to `ark-groth16` over BN254. Its setup
//!   derives toxic waste from a seed and is **insecure for production use**.
//!
//! Keys and proofs are bound to the circuit build hash; a mismatch is
//! rejected before any cryptographic work.

mod files;
mod groth16;
mod transparent;

pub use files::FileError;
pub use groth16::Groth16;
pub use transparent::Transparent;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::field::FieldScalar;
use crate::r1cs::{Assignment, ConstraintSystem, R1csError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendId {
    Check,
    Groth16,
}

impl BackendId {
    pub(crate) fn tag(self) -> u8 {
        match self {
            BackendId::Check => 1,
            BackendId::Groth16 => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(BackendId::Check),
            2 => Some(BackendId::Groth16),
            _ => None,
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendId::Check => "check",
            BackendId::Groth16 => "groth16",
        })
    }
}

impl FromStr for BackendId {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "check" => Ok(BackendId::Check),
            "groth16" => Ok(BackendId::Groth16),
            other => Err(BackendError::UnknownBackend(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("build hash mismatch: key is for {expected}, got {found}")]
    KeyMismatch { expected: String, found: String },
    #[error("{found} material passed to the {expected} backend")]
    WrongBackend { expected: BackendId, found: BackendId },
    #[error("witness violates constraint {index} ({annotation})")]
    UnsatisfiedWitness { index: usize, annotation: String },
    #[error("constraint system is not finalized")]
    NotFinalized,
    #[error("public input count {found} does not match the circuit's {expected}")]
    PublicInputCount { expected: usize, found: usize },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("proving failed: {0}")]
    Synthesis(String),
    #[error(transparent)]
    R1cs(#[from] R1csError),
}

impl BackendError {
    pub(crate) fn malformed(what: &'static str, detail: impl fmt::Display) -> Self {
        BackendError::Malformed { what, detail: detail.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProverKey {
    pub backend: BackendId,
    pub build_hash: [u8; 32],
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierKey {
    pub backend: BackendId,
    pub build_hash: [u8; 32],
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofBundle {
    pub backend: BackendId,
    pub build_hash: [u8; 32],
    pub proof: Vec<u8>,
    pub public_inputs: Vec<FieldScalar>,
}

pub trait ProofBackend: Send + Sync {
    fn id(&self) -> BackendId;

    fn setup(&self, cs: &ConstraintSystem) -> Result<(ProverKey, VerifierKey), BackendError>;

    /// Proves that `assignment` satisfies `cs`. The public part of the
    /// assignment travels in the bundle.
    fn prove(&self, pk: &ProverKey, cs: &ConstraintSystem, assignment: &Assignment) -> Result<ProofBundle, BackendError>;

    /// `Ok(false)` for proofs that are well-formed but invalid, or that fail
    /// to decode; `Err` for key/bundle mismatches.
    fn verify(&self, vk: &VerifierKey, bundle: &ProofBundle) -> Result<bool, BackendError>;
}

/// The backend behind `id`. Groth16 uses `seed` for its simulated ceremony
/// and proof randomness.
pub fn backend_for(id: BackendId, seed: u64) -> Box<dyn ProofBackend> {
    match id {
        BackendId::Check => Box::new(Transparent),
        BackendId::Groth16 => Box::new(Groth16::with_seed(seed)),
    }
}

fn check_binding(backend: BackendId, key_backend: BackendId, key_hash: &[u8; 32], hash: &[u8; 32]) -> Result<(), BackendError> {
    if key_backend != backend {
        return Err(BackendError::WrongBackend { expected: backend, found: key_backend });
    }
    if key_hash != hash {
        return Err(BackendError::KeyMismatch { expected: hex::encode(key_hash), found: hex::encode(hash) });
    }
    Ok(())
}

fn check_witness(cs: &ConstraintSystem, assignment: &Assignment) -> Result<(), BackendError> {
    if !cs.is_finalized() {
        return Err(BackendError::NotFinalized);
    }
    if let crate::r1cs::Satisfaction::Violated { index, annotation } = cs.is_satisfied(assignment)? {
        return Err(BackendError::UnsatisfiedWitness { index, annotation });
    }
    Ok(())
}
