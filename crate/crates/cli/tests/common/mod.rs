#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_triplet-tagger"));
    c.env_remove("TRIPLET_TAGGER_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes a run config for `catalog` into `dir` and returns its path.
pub fn write_config(
    dir: &Path,
    name: &str,
    catalog: &Path,
    model: serde_json::Value,
    train: serde_json::Value,
) -> std::path::PathBuf {
    let config = serde_json::json!({
        "data": {"catalog": catalog},
        "model": model,
        "train": train,
        "output_dir": dir.join(format!("{name}-out")),
    });
    let p = dir.join(format!("{name}.json"));
    std::fs::write(&p, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    p
}
