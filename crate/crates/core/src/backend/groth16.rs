use ark_bn254::{Bn254, Fr, G1Projective};
use ark_ec::VariableBaseMSM;
use ark_groth16::{prepare_verifying_key, Proof, ProvingKey, VerifyingKey};
use ark_relations::r1cs::{
    ConstraintSynthesizer, ConstraintSystemRef, LinearCombination as ArkLc, SynthesisError, Variable as ArkVar,
};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
use ark_snark::SNARK;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{check_binding, check_witness, BackendError, BackendId, ProofBackend, ProofBundle, ProverKey, VerifierKey};
use crate::r1cs::{Assignment, ConstraintSystem, LinearCombination, Visibility};

type Snark = ark_groth16::Groth16<Bn254>;

/// Groth16 over BN254 via `ark-groth16`.
///
/// INSECURE FOR PRODUCTION: the setup's toxic waste is drawn from a ChaCha
/// stream keyed by `seed` and the build hash, so anyone who knows the seed
/// can forge proofs. Proof randomness is derived the same way so runs are
/// reproducible.
#[derive(Debug, Clone, Copy)]
pub struct Groth16 {
    seed: u64,
}

impl Groth16 {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, purpose: &[u8], build_hash: &[u8; 32]) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(b"zkwm-groth16/");
        h.update(purpose);
        h.update(self.seed.to_le_bytes());
        h.update(build_hash);
        ChaCha20Rng::from_seed(h.finalize().into())
    }
}

/// Replays a finalized system into an arkworks constraint system. Our
/// public and private classes map one-to-one, in order, onto instance and
/// witness variables.
struct Adapter<'a> {
    cs: &'a ConstraintSystem,
    assignment: Option<&'a Assignment>,
}

impl ConstraintSynthesizer<Fr> for Adapter<'_> {
    fn generate_constraints(self, ark: ConstraintSystemRef<Fr>) -> Result<(), SynthesisError> {
        let values = |public: bool, i: usize| {
            let a = self.assignment.ok_or(SynthesisError::AssignmentMissing)?;
            let v = if public { &a.public } else { &a.private };
            v.get(i).map(|x| x.inner()).ok_or(SynthesisError::AssignmentMissing)
        };
        let mut public = Vec::with_capacity(self.cs.num_public());
        for i in 0..self.cs.num_public() {
            public.push(ark.new_input_variable(|| values(true, i))?);
        }
        let mut private = Vec::with_capacity(self.cs.num_private());
        for i in 0..self.cs.num_private() {
            private.push(ark.new_witness_variable(|| values(false, i))?);
        }
        let lc = |lc: &LinearCombination| {
            ArkLc(
                lc.terms()
                    .iter()
                    .map(|(v, c)| {
                        let var = match v.visibility() {
                            Visibility::One => ArkVar::One,
                            Visibility::Public => public[v.index() as usize],
                            Visibility::Private => private[v.index() as usize],
                        };
                        (c.inner(), var)
                    })
                    .collect(),
            )
        };
        for c in self.cs.constraints() {
            ark.enforce_constraint(lc(&c.a), lc(&c.b), lc(&c.c))?;
        }
        Ok(())
    }
}

fn serialize<T: CanonicalSerialize>(value: &T, compressed: bool) -> Vec<u8> {
    let mut out = Vec::new();
    let res = if compressed {
        value.serialize_compressed(&mut out)
    } else {
        value.serialize_uncompressed(&mut out)
    };
    res.expect("writing to a Vec cannot fail");
    out
}

impl ProofBackend for Groth16 {
    fn id(&self) -> BackendId {
        BackendId::Groth16
    }

    fn setup(&self, cs: &ConstraintSystem) -> Result<(ProverKey, VerifierKey), BackendError> {
        if !cs.is_finalized() {
            return Err(BackendError::NotFinalized);
        }
        let build_hash = cs.build_hash();
        let mut rng = self.rng(b"setup", &build_hash);
        let (pk, vk) = Snark::circuit_specific_setup(Adapter { cs, assignment: None }, &mut rng)
            .map_err(|e| BackendError::Synthesis(e.to_string()))?;
        Ok((
            ProverKey { backend: self.id(), build_hash, payload: serialize(&pk, false) },
            // Uncompressed so verifiers skip one square root per public input.
            VerifierKey { backend: self.id(), build_hash, payload: serialize(&vk, false) },
        ))
    }

    fn prove(&self, pk: &ProverKey, cs: &ConstraintSystem, assignment: &Assignment) -> Result<ProofBundle, BackendError> {
        let build_hash = cs.build_hash();
        check_binding(self.id(), pk.backend, &pk.build_hash, &build_hash)?;
        check_witness(cs, assignment)?;
        // The key was produced by `setup` and is trusted by the prover, so
        // skip the expensive subgroup checks.
        let key = ProvingKey::<Bn254>::deserialize_uncompressed_unchecked(pk.payload.as_slice())
            .map_err(|e| BackendError::malformed("prover key", e))?;
        let mut h = Sha256::new();
        for x in &assignment.public {
            h.update(x.to_le_bytes());
        }
        let mut purpose = b"prove/".to_vec();
        purpose.extend_from_slice(&h.finalize());
        let mut rng = self.rng(&purpose, &build_hash);
        let proof = Snark::prove(&key, Adapter { cs, assignment: Some(assignment) }, &mut rng)
            .map_err(|e| BackendError::Synthesis(e.to_string()))?;
        Ok(ProofBundle {
            backend: self.id(),
            build_hash,
            proof: serialize(&proof, true),
            public_inputs: assignment.public.clone(),
        })
    }

    fn verify(&self, vk: &VerifierKey, bundle: &ProofBundle) -> Result<bool, BackendError> {
        check_binding(self.id(), vk.backend, &vk.build_hash, &bundle.build_hash)?;
        check_binding(self.id(), bundle.backend, &vk.build_hash, &bundle.build_hash)?;
        let key = VerifyingKey::<Bn254>::deserialize_uncompressed(vk.payload.as_slice())
            .map_err(|e| BackendError::malformed("verifier key", e))?;
        let expected = key.gamma_abc_g1.len() - 1;
        if bundle.public_inputs.len() != expected {
            return Err(BackendError::PublicInputCount { expected, found: bundle.public_inputs.len() });
        }
        let mut bytes = bundle.proof.as_slice();
        let Ok(proof) = Proof::<Bn254>::deserialize_compressed(&mut bytes) else {
            return Ok(false);
        };
        if !bytes.is_empty() {
            return Ok(false);
        }
        // The input combination as one multi-scalar multiplication; the
        // library's own loop does one scalar multiplication per input.
        let inputs: Vec<Fr> = bundle.public_inputs.iter().map(|x| x.inner()).collect();
        let acc = G1Projective::msm(&key.gamma_abc_g1[1..], &inputs).expect("lengths checked above");
        let prepared = acc + key.gamma_abc_g1[0];
        let pvk = prepare_verifying_key(&key);
        Snark::verify_proof_with_prepared_inputs(&pvk, &proof, &prepared)
            .map_err(|e| BackendError::Synthesis(e.to_string()))
    }
}
