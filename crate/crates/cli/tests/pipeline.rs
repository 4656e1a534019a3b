use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = "64-FC(8)-ReLU-FC(4)";

fn zkwm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zkwm")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = zkwm(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Embeds into a small model and compiles its circuit; returns the dir.
fn prepared(bits: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = ok(
        d,
        &["embed", "--seed", "3", "--spec", SPEC, "--bits", bits, "--model", "m.bin", "--key", "k.json", "--baseline", "b.bin"],
    );
    assert!(out.contains("BER: 0.0000"), "{out}");
    ok(d, &["compile", "--model", "m.bin", "--key", "k.json", "--circuit", "c.r1cs"]);
    dir
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn groth16_pipeline_verifies_without_private_files() {
    let dir = prepared("8");
    let d = dir.path();
    ok(d, &["setup", "--circuit", "c.r1cs", "--backend", "groth16", "--pk", "pk", "--vk", "vk"]);
    let out = ok(d, &["prove", "--circuit", "c.r1cs", "--model", "m.bin", "--key", "k.json", "--pk", "pk", "--proof", "pf"]);
    assert!(out.contains("output: 1"));
    std::fs::remove_file(path(&dir, "k.json")).unwrap();
    std::fs::remove_file(path(&dir, "pk")).unwrap();
    assert!(ok(d, &["verify", "--vk", "vk", "--proof", "pf"]).contains("accept"));
    ok(d, &["verify", "--vk", "vk", "--proof", "pf", "--model", "m.bin", "--circuit", "c.r1cs"]);
    // The same proof does not speak for a different model.
    let out = zkwm(d, &["verify", "--vk", "vk", "--proof", "pf", "--model", "b.bin", "--circuit", "c.r1cs"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn baseline_model_is_rejected() {
    let dir = prepared("8");
    let d = dir.path();
    ok(d, &["setup", "--circuit", "c.r1cs", "--backend", "check", "--pk", "pk", "--vk", "vk"]);
    let out = ok(d, &["prove", "--circuit", "c.r1cs", "--model", "b.bin", "--key", "k.json", "--pk", "pk", "--proof", "pf"]);
    assert!(out.contains("output: 0"));
    assert_eq!(code(&zkwm(d, &["verify", "--vk", "vk", "--proof", "pf"])), 1);
}

#[test]
fn damaged_or_foreign_material_never_accepts() {
    let dir = prepared("8");
    let d = dir.path();
    ok(d, &["setup", "--circuit", "c.r1cs", "--backend", "check", "--pk", "pk", "--vk", "vk"]);
    ok(d, &["prove", "--circuit", "c.r1cs", "--model", "m.bin", "--key", "k.json", "--pk", "pk", "--proof", "pf"]);
    ok(d, &["verify", "--vk", "vk", "--proof", "pf"]);

    let proof = std::fs::read(path(&dir, "pf")).unwrap();
    std::fs::write(path(&dir, "short"), &proof[..proof.len() - 1]).unwrap();
    assert_ne!(code(&zkwm(d, &["verify", "--vk", "vk", "--proof", "short"])), 0);

    // A verifier key for another circuit is a binding error.
    ok(d, &["compile", "--model", "m.bin", "--circuit", "c2.r1cs", "--bits", "4", "--triggers", "16"]);
    ok(d, &["setup", "--circuit", "c2.r1cs", "--backend", "check", "--pk", "pk2", "--vk", "vk2"]);
    assert_eq!(code(&zkwm(d, &["verify", "--vk", "vk2", "--proof", "pf"])), 2);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = zkwm(d, &["embed", "--seed", "1", "--model", "m", "--key", "k", "--dataset", "file:missing.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    assert_eq!(code(&zkwm(d, &["embed", "--model", "m", "--key", "k"])), 2);
    assert_eq!(code(&zkwm(d, &["verify", "--vk", "nope", "--proof", "nope"])), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_zkwm"))
        .current_dir(d)
        .env("ZKWM_THREADS", "zero")
        .args(["bench", "--circuits", "ber", "--backend", "check"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn embed_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for name in ["a", "b"] {
        ok(d, &["embed", "--seed", "5", "--spec", SPEC, "--bits", "8", "--model", name, "--key", &format!("{name}.json")]);
    }
    assert_eq!(std::fs::read(path(&dir, "a")).unwrap(), std::fs::read(path(&dir, "b")).unwrap());
    assert_eq!(std::fs::read(path(&dir, "a.json")).unwrap(), std::fs::read(path(&dir, "b.json")).unwrap());
}

#[test]
fn bench_reports_rows() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["bench", "--backend", "check", "--circuits", "ber,relu", "--jsonl", "rows.jsonl"]);
    assert!(out.contains("ber") && out.contains("relu"));
    let lines = std::fs::read_to_string(path(&dir, "rows.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    assert!(lines.lines().all(|l| l.contains("\"verified\":true")));
}
