#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Small two-tier mixture run that finishes in well under a second.
pub const SMALL: &str = r#"
[run]
rounds = 4
tiers = 2
seed = 11

[population]
kind = "mixture"
num_clients = 8
train_samples = 60
test_samples = 30
personal_samples = 20

[selection]
merit_per_tier = 3
random_per_tier = 1
"#;

pub fn pifl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pifl"))
        .args(args)
        .env_remove("PIFL_OUT_DIR")
        .output()
        .expect("spawn pifl")
}

pub fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

pub fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}
