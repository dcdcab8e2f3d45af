//! Paths to the feeders, profiles and sensor placements shipped with the repository.

use std::path::PathBuf;

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn feeder(file: &str) -> PathBuf {
    repo_root().join("feeders").join(file)
}

pub fn data(file: &str) -> PathBuf {
    repo_root().join("data").join(file)
}

pub fn sensors(file: &str) -> PathBuf {
    repo_root().join("sensors").join(file)
}

pub const CASE33: &str = "case33.json";
pub const IEEE13: &str = "ieee13_simplified.json";
pub const TWO_BUS: &str = "two_bus.json";
pub const LOAD_MULTIPLIER: &str = "load_multiplier.txt";
pub const PV_PROFILE: &str = "pv_hinesburg_synthetic_kw.txt";
pub const CASE33_SENSORS: &str = "case33_sparse.csv";
pub const IEEE13_SENSORS: &str = "ieee13_sparse.csv";
