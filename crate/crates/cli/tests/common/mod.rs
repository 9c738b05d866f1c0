#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;
use usts_cli::{Cli, CliError};

/// Runs one command line through the library with an empty environment.
pub fn usts(args: &[&str]) -> Result<(), CliError> {
    let cli = Cli::try_parse_from(std::iter::once("usts").chain(args.iter().copied()))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    usts_cli::run(cli, Vec::new())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesises and prepares a small dataset under `root`; returns the
/// cache path and the config path.
pub fn workspace(root: &Path, nodes: usize, seed: u64) -> (PathBuf, PathBuf) {
    let nodes_s = nodes.to_string();
    let seed_s = seed.to_string();
    usts(&["synth", "--out", p(root), "--nodes", &nodes_s, "--seed", &seed_s]).unwrap();
    let cfg = root.join("config.toml");
    usts(&[
        "prepare",
        "--config",
        p(&cfg),
        "--input",
        p(&root.join("data.tsv")),
        "--out",
        p(root),
    ])
    .unwrap();
    (root.join("data.usts"), cfg)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Parsed CSV body (header dropped).
pub fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let body = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, body)
}
