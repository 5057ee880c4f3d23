#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn zeus() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_zeus"));
    cmd.env_remove("ZEUS_LOG");
    cmd
}

/// Runs the binary from `cwd` and returns its output.
pub fn run(cwd: &Path, args: &[&str]) -> Output {
    zeus().current_dir(cwd).args(args).output().expect("spawn zeus")
}

pub fn run_ok(cwd: &Path, args: &[&str]) -> Output {
    let out = run(cwd, args);
    assert!(
        out.status.success(),
        "zeus {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn sample_prompts() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples/prompts_skin.json")
}

/// Per-slide DSC from the first line of a report.jsonl.
pub fn first_dsc(report: &Path) -> f64 {
    let text = std::fs::read_to_string(report).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["dsc"].as_f64().unwrap()
}

pub fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}
