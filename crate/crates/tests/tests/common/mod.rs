#![allow(dead_code)]

use std::path::PathBuf;

use fdloc::case::{parse_case, NetworkCase};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> NetworkCase {
    let path = repo_root().join("fixtures").join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).expect("fixture readable");
    parse_case(&text).expect("fixture valid")
}

pub const FIXTURES: [&str; 3] = ["wecc9", "ieee14", "ieee39"];

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(format!("{name}.toml"))
}
