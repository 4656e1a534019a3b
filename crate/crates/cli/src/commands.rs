use std::io::Write as _;
use std::path::Path;

use thiserror::Error;
use zkwm_core::backend::{backend_for, BackendError, FileError, ProofBundle, ProverKey, VerifierKey};
use zkwm_core::bench::{render_table, run_bench, BenchCircuit, BenchConfig, BenchError};
use zkwm_core::circuit::{assign, compile as compile_circuit, expected_public_inputs, CircuitArtifact, CircuitError, CircuitParams};
use zkwm_core::field::FieldScalar;
use zkwm_core::nn::{KeyConfig, ModelFile, NnError, Provenance, WatermarkKey};
use zkwm_core::pipeline::{run_embedding, EmbedRequest};

use crate::{BenchArgs, CompileArgs, EmbedArgs, ProveArgs, SetupArgs, VerifyArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    File { path: String, source: FileError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("rejected: {0}")]
    Rejected(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Rejected(_) => 1,
            _ => 2,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn parse_file<T>(path: &Path, f: impl FnOnce(&[u8]) -> Result<T, FileError>) -> Result<T, CliError> {
    f(&read(path)?).map_err(|source| CliError::File { path: path.display().to_string(), source })
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    Ok(ModelFile::from_bytes(&read(path)?)?)
}

fn load_key(path: &Path) -> Result<WatermarkKey, CliError> {
    let text = String::from_utf8(read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(WatermarkKey::from_json(&text)?)
}

fn load_circuit(path: &Path) -> Result<CircuitArtifact, CliError> {
    Ok(CircuitArtifact::load(path)?)
}

pub fn embed(a: EmbedArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&a.theta) {
        return Err(CliError::Usage(format!("--theta must lie in [0, 1), got {}", a.theta)));
    }
    let mut req = EmbedRequest::desk(a.seed);
    req.spec = a.spec.parse()?;
    req.dataset = a.dataset.clone();
    req.key = KeyConfig { class: a.class, bits: a.bits, layer: a.layer, theta: a.theta };
    req.baseline.epochs = a.baseline_epochs;
    req.embed.lambda = a.lambda;
    req.embed.train.epochs = a.epochs;
    let out = run_embedding(&req)?;
    let provenance = Provenance {
        seed: a.seed,
        dataset: a.dataset.to_string(),
        baseline: Some(out.baseline_config),
        embedding: None,
    };
    if let Some(path) = &a.baseline {
        let file = ModelFile { spec: out.spec.clone(), weights: out.baseline.clone(), format: a.format, provenance: provenance.clone() };
        write(path, file.to_bytes())?;
    }
    let file = ModelFile {
        spec: out.spec.clone(),
        weights: out.weights.clone(),
        format: a.format,
        provenance: Provenance { embedding: Some(out.embed_config), ..provenance },
    };
    write(&a.model, file.to_bytes())?;
    write(&a.key, out.key.to_json())?;
    println!("model: {}", out.spec);
    println!("triggers: {}", out.key.triggers.len());
    println!("accuracy: baseline {:.4}, watermarked {:.4}", out.summary.baseline_accuracy, out.summary.watermarked_accuracy);
    println!("BER: {:.4}", out.summary.ber);
    Ok(())
}

pub fn compile(a: CompileArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let format = a.format.unwrap_or(model.format);
    let params = match &a.key {
        Some(path) => CircuitParams::for_key(&load_key(path)?, format),
        None => CircuitParams {
            format,
            layer: a.layer,
            bits: a.bits,
            theta: a.theta,
            triggers: a.triggers.expect("clap requires --triggers without --key"),
        },
    };
    let artifact = compile_circuit(&model.spec, &params)?;
    artifact
        .save(&a.circuit)
        .map_err(|source| CliError::Io { path: a.circuit.display().to_string(), source })?;
    let m = &artifact.metadata;
    println!("constraints: {}", m.stats.num_constraints);
    println!("public inputs: {}", m.stats.num_public);
    println!("private inputs: {}", m.stats.num_private);
    println!("build hash: {}", m.build_hash);
    Ok(())
}

pub fn setup(a: SetupArgs) -> Result<(), CliError> {
    let artifact = load_circuit(&a.circuit)?;
    let backend = backend_for(a.backend, a.seed);
    let (pk, vk) = backend.setup(&artifact.cs)?;
    let (pk_bytes, vk_bytes) = (pk.to_bytes(), vk.to_bytes());
    write(&a.pk, &pk_bytes)?;
    write(&a.vk, &vk_bytes)?;
    println!("backend: {}", a.backend);
    println!("prover key: {} bytes", pk_bytes.len());
    println!("verifier key: {} bytes", vk_bytes.len());
    Ok(())
}

pub fn prove(a: ProveArgs) -> Result<(), CliError> {
    let artifact = load_circuit(&a.circuit)?;
    let pk = parse_file(&a.pk, ProverKey::from_bytes)?;
    let model = load_model(&a.model)?;
    let key = load_key(&a.key)?;
    let assignment = assign(&artifact, &model.weights, &key)?;
    let bundle = backend_for(pk.backend, 0).prove(&pk, &artifact.cs, &assignment)?;
    write(&a.proof, bundle.to_bytes())?;
    let output = bundle.public_inputs.last().copied().unwrap_or_else(FieldScalar::zero);
    println!("proof: {} bytes", bundle.proof.len());
    println!("output: {}", u8::from(output == FieldScalar::one()));
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let vk = parse_file(&a.vk, VerifierKey::from_bytes)?;
    let bundle = parse_file(&a.proof, ProofBundle::from_bytes)?;
    if let (Some(model), Some(circuit)) = (&a.model, &a.circuit) {
        let artifact = load_circuit(circuit)?;
        if hex_hash(&vk.build_hash) != artifact.metadata.build_hash {
            return Err(CliError::Usage("verifier key was not made for this circuit".into()));
        }
        let expected = expected_public_inputs(&artifact.metadata, &load_model(model)?.weights)?;
        if bundle.public_inputs.get(..expected.len()) != Some(expected.as_slice()) {
            return Err(CliError::Rejected("proof is about different model weights".into()));
        }
    }
    if !backend_for(vk.backend, 0).verify(&vk, &bundle)? {
        return Err(CliError::Rejected("proof is invalid".into()));
    }
    if bundle.public_inputs.last() != Some(&FieldScalar::one()) {
        return Err(CliError::Rejected("proof is valid but its output bit is 0 (watermark not extracted)".into()));
    }
    println!("accept");
    Ok(())
}

fn hex_hash(h: &[u8; 32]) -> String {
    h.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn bench(a: BenchArgs) -> Result<(), CliError> {
    let circuits = if a.circuits.is_empty() {
        BenchCircuit::ALL.to_vec()
    } else {
        a.circuits.iter().map(|s| s.parse()).collect::<Result<Vec<BenchCircuit>, _>>()?
    };
    let cfg = BenchConfig { backend: a.backend, seed: a.seed, max_prove_constraints: a.max_prove_constraints };
    let mut rows = Vec::with_capacity(circuits.len());
    for c in circuits {
        eprintln!("bench: {}", c.name());
        rows.push(run_bench(c, &cfg)?);
    }
    let lines: String = rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect();
    match a.jsonl.as_deref() {
        Some(p) if p == Path::new("-") => print!("{lines}"),
        Some(p) => write(p, lines)?,
        None => {}
    }
    print!("{}", render_table(&rows));
    std::io::stdout().flush().ok();
    Ok(())
}
