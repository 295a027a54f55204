//! Shared fixtures for the criterion benches.

use std::path::PathBuf;

use skipdisk::dataio::{gen_synthetic, split_queries, SyntheticModel};
use skipdisk::VectorDataset;

/// Clustered base set plus held-out queries.
pub fn dataset(n: usize, dim: usize, queries: usize, seed: u64) -> (VectorDataset, VectorDataset) {
    let all = gen_synthetic(n + queries, dim, seed, SyntheticModel::Clustered { k: 32 }).expect("generate");
    split_queries(&all, queries, seed + 1).expect("split")
}

/// Store path under the system temp directory, unique per process.
pub fn scratch_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("skipdisk-bench-{}-{name}", std::process::id()))
}
