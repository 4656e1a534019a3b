//! `zkwm`: embed a watermark, compile its extraction circuit, and prove or
//! verify ownership.
//!
//! Exit codes: 0 accept / success, 1 proof rejected, 2 usage or input error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zkwm_core::backend::BackendId;
use zkwm_core::fixed::FixedPointFormat;
use zkwm_core::nn::DatasetSource;

#[derive(Parser)]
#[command(name = "zkwm", version, about = "Zero-knowledge proofs of neural-network watermark ownership")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a baseline model, generate a key, and embed the watermark.
    Embed(EmbedArgs),
    /// Compile the extraction circuit for a model's architecture.
    Compile(CompileArgs),
    /// Generate prover and verifier keys for a compiled circuit.
    Setup(SetupArgs),
    /// Prove that the key extracts the watermark from the model.
    Prove(ProveArgs),
    /// Check a proof against a verifier key.
    Verify(VerifyArgs),
    /// Measure constraint counts and backend timings per circuit.
    Bench(BenchArgs),
}

#[derive(Args)]
struct EmbedArgs {
    /// Seed for data, initialization, key generation and training.
    #[arg(long)]
    seed: u64,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    /// Output watermark key file (private).
    #[arg(long)]
    key: PathBuf,
    /// Also write the un-watermarked baseline model.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "blobs")]
    dataset: DatasetSource,
    /// Architecture, e.g. "64-FC(32)-ReLU-FC(32)-ReLU-FC(4)".
    #[arg(long, default_value = zkwm_core::pipeline::DESK_SPEC)]
    spec: String,
    #[arg(long, default_value_t = 32)]
    bits: usize,
    /// Activation index holding the watermark (1 = first layer output).
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Class the triggers are drawn from.
    #[arg(long, default_value_t = 0)]
    class: usize,
    /// Weight of the watermark loss term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    baseline_epochs: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Fixed-point format recorded in the model file, as frac_bits:width.
    #[arg(long, default_value_t = FixedPointFormat::default())]
    format: FixedPointFormat,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output circuit file; metadata goes to the same path plus `.json`.
    #[arg(long)]
    circuit: PathBuf,
    /// Read layer, bits, theta and trigger count from this key.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, conflicts_with = "key", default_value_t = 32)]
    bits: usize,
    #[arg(long, conflicts_with = "key", default_value_t = 1)]
    layer: usize,
    #[arg(long, conflicts_with = "key", default_value_t = 0.0)]
    theta: f64,
    /// Number of trigger inputs; required without --key.
    #[arg(long, conflicts_with = "key", required_unless_present = "key")]
    triggers: Option<usize>,
    /// Overrides the model file's format.
    #[arg(long)]
    format: Option<FixedPointFormat>,
}

#[derive(Args)]
struct SetupArgs {
    #[arg(long)]
    circuit: PathBuf,
    #[arg(long)]
    pk: PathBuf,
    #[arg(long)]
    vk: PathBuf,
    #[arg(long, default_value = "groth16")]
    backend: BackendId,
    /// Seed for the simulated setup ceremony.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ProveArgs {
    #[arg(long)]
    circuit: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    pk: PathBuf,
    #[arg(long)]
    proof: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    vk: PathBuf,
    #[arg(long)]
    proof: PathBuf,
    /// Also require the proof's public weights to equal this model's.
    #[arg(long, requires = "circuit")]
    model: Option<PathBuf>,
    /// Circuit metadata used to lay out the expected public inputs.
    #[arg(long, requires = "model")]
    circuit: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "groth16")]
    backend: BackendId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of circuits (default: all).
    #[arg(long, value_delimiter = ',')]
    circuits: Vec<String>,
    /// Larger circuits are synthesized but not set up or proved.
    #[arg(long, default_value_t = 250_000)]
    max_prove_constraints: usize,
    /// Write one JSON object per row here ("-" for stdout).
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

fn configure_threads() -> Result<(), commands::CliError> {
    let Ok(value) = std::env::var("ZKWM_THREADS") else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| commands::CliError::Usage(format!("ZKWM_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Embed(a) => commands::embed(a),
        Command::Compile(a) => commands::compile(a),
        Command::Setup(a) => commands::setup(a),
        Command::Prove(a) => commands::prove(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
