use sha2::{Digest, Sha256};

use super::{check_binding, check_witness, BackendError, BackendId, ProofBackend, ProofBundle, ProverKey, VerifierKey};
use crate::field::{FieldScalar, ENCODED_LEN};
use crate::r1cs::{Assignment, ConstraintSystem};

/// Satisfiability checking dressed as a proof system.
///
/// Both keys hold the encoded constraint system. The "proof" is the private
/// witness plus a SHA-256 commitment over the hash, public and private
/// values; verification re-evaluates every constraint. Anyone holding a
/// proof learns the whole witness.
#[derive(Debug, Clone, Copy, Default)]
pub struct Transparent;

fn commitment(build_hash: &[u8; 32], public: &[FieldScalar], private: &[FieldScalar]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"zkwm-transparent");
    h.update(build_hash);
    h.update((public.len() as u64).to_le_bytes());
    for x in public.iter().chain(private) {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

impl ProofBackend for Transparent {
    fn id(&self) -> BackendId {
        BackendId::Check
    }

    fn setup(&self, cs: &ConstraintSystem) -> Result<(ProverKey, VerifierKey), BackendError> {
        if !cs.is_finalized() {
            return Err(BackendError::NotFinalized);
        }
        let build_hash = cs.build_hash();
        let payload = cs.to_bytes();
        Ok((
            ProverKey { backend: self.id(), build_hash, payload: payload.clone() },
            VerifierKey { backend: self.id(), build_hash, payload },
        ))
    }

    fn prove(&self, pk: &ProverKey, cs: &ConstraintSystem, assignment: &Assignment) -> Result<ProofBundle, BackendError> {
        check_binding(self.id(), pk.backend, &pk.build_hash, &cs.build_hash())?;
        check_witness(cs, assignment)?;
        let mut proof = Vec::with_capacity(32 + assignment.private.len() * ENCODED_LEN);
        proof.extend_from_slice(&commitment(&pk.build_hash, &assignment.public, &assignment.private));
        for x in &assignment.private {
            proof.extend_from_slice(&x.to_le_bytes());
        }
        Ok(ProofBundle {
            backend: self.id(),
            build_hash: pk.build_hash,
            proof,
            public_inputs: assignment.public.clone(),
        })
    }

    fn verify(&self, vk: &VerifierKey, bundle: &ProofBundle) -> Result<bool, BackendError> {
        check_binding(self.id(), vk.backend, &vk.build_hash, &bundle.build_hash)?;
        check_binding(self.id(), bundle.backend, &vk.build_hash, &bundle.build_hash)?;
        let cs = ConstraintSystem::from_bytes(&vk.payload).map_err(|e| BackendError::malformed("verifier key", e))?;
        if cs.build_hash() != vk.build_hash {
            return Err(BackendError::malformed("verifier key", "payload does not match its build hash"));
        }
        if bundle.public_inputs.len() != cs.num_public() {
            return Err(BackendError::PublicInputCount { expected: cs.num_public(), found: bundle.public_inputs.len() });
        }
        let body = &bundle.proof;
        if body.len() != 32 + cs.num_private() * ENCODED_LEN {
            return Ok(false);
        }
        let mut private = Vec::with_capacity(cs.num_private());
        for chunk in body[32..].chunks_exact(ENCODED_LEN) {
            match FieldScalar::from_le_bytes(chunk.try_into().unwrap()) {
                Ok(x) => private.push(x),
                Err(_) => return Ok(false),
            }
        }
        if body[..32] != commitment(&bundle.build_hash, &bundle.public_inputs, &private) {
            return Ok(false);
        }
        let assignment = Assignment::new(bundle.public_inputs.clone(), private);
        Ok(cs.is_satisfied(&assignment)?.is_ok())
    }
}
