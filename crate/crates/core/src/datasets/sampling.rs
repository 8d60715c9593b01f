//! Anchor and projection data.
//!
//! Anchor rows are shared by every user; projection rows are drawn
//! separately for each user from a public pool.

use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{load_dataset, seeded_rng, LabeledDataset};
use crate::error::{ensure, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum AnchorStrategy {
    /// i.i.d. uniform on [0, 1].
    Uniform01,
    /// i.i.d. Bernoulli(`density`) bits.
    Binary01 {
        #[serde(default = "default_binary_density")]
        density: f64,
    },
    /// Rows drawn without replacement from a dataset file.
    PoolSample { pool_path: PathBuf },
}

fn default_binary_density() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    #[serde(flatten)]
    pub strategy: AnchorStrategy,
    pub count: usize,
    pub seed: u64,
}

/// Builds the shared anchor set. The result is unlabeled.
pub fn generate_anchor(spec: &AnchorSpec, m: usize) -> Result<LabeledDataset> {
    ensure!(spec.count >= 1, "anchor count must be at least 1");
    let mut rng = seeded_rng(spec.seed);
    let n = spec.count * m;
    let data: Vec<f64> = match &spec.strategy {
        AnchorStrategy::Uniform01 => (0..n).map(|_| rng.random::<f64>()).collect(),
        AnchorStrategy::Binary01 { density } => {
            ensure!(
                (0.0..=1.0).contains(density),
                "binary anchor density {density} outside [0, 1]"
            );
            (0..n)
                .map(|_| if rng.random_bool(*density) { 1.0 } else { 0.0 })
                .collect()
        }
        AnchorStrategy::PoolSample { pool_path } => {
            let pool = load_dataset(pool_path)?;
            ensure!(
                pool.feature_dim() == m,
                "anchor pool {} has dimension {}, expected {}",
                pool_path.display(),
                pool.feature_dim(),
                m
            );
            return sample_anchor_from_pool(&pool, spec.count, spec.seed);
        }
    };
    Ok(LabeledDataset::unlabeled(DenseMatrix::from_vec(spec.count, m, data)))
}

/// `count` pool rows without replacement, in sampled order.
pub fn sample_anchor_from_pool(pool: &LabeledDataset, count: usize, seed: u64) -> Result<LabeledDataset> {
    sample_rows(pool, count, seed, "anchor")
}

/// Per-user projection data: `b` pool rows without replacement. Different
/// `user_seed` values give independent draws.
pub fn sample_projection_data(pool: &LabeledDataset, b: usize, user_seed: u64) -> Result<LabeledDataset> {
    sample_rows(pool, b, user_seed, "projection")
}

fn sample_rows(pool: &LabeledDataset, count: usize, seed: u64, what: &str) -> Result<LabeledDataset> {
    ensure!(count >= 1, "{what} count must be at least 1");
    ensure!(
        count <= pool.len(),
        "{what} count {count} exceeds pool size {}",
        pool.len()
    );
    let picked = index::sample(&mut seeded_rng(seed), pool.len(), count).into_vec();
    Ok(LabeledDataset::unlabeled(pool.features().select_rows(&picked)))
}
