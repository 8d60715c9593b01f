//! Binary-fingerprint datasets: representation, file format, splitting,
//! partitioning across users, anchor and projection-data sourcing, and a
//! synthetic generator used in place of real compound data.

mod io;
mod partition;
mod sampling;
mod split;
mod synthetic;

pub use io::{
    format_dataset, load_dataset, parse_dataset, read_matrix_csv, save_dataset, write_matrix_csv,
    HEADER_PREFIX,
};
pub use partition::{partition_iid, partition_label_bias, PartitionPlan};
pub use sampling::{
    generate_anchor, sample_anchor_from_pool, sample_projection_data, AnchorSpec, AnchorStrategy,
};
pub use split::{split_train_valid_test, TrainValidTest};
pub use synthetic::{generate_synthetic_fingerprint_dataset, SyntheticFamily};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::DenseMatrix;

/// Default fingerprint length.
pub const DEFAULT_FEATURE_DIM: usize = 2048;

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-seed for stream `stream` of `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Zero,
    One,
    Unlabeled,
}

impl Label {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Label::Zero
        } else {
            Label::One
        }
    }

    pub fn as_bit(self) -> Option<u8> {
        match self {
            Label::Zero => Some(0),
            Label::One => Some(1),
            Label::Unlabeled => None,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Label::Zero => "0",
            Label::One => "1",
            Label::Unlabeled => "?",
        }
    }
}

/// Sample matrix with one label per row. Pools (anchor and projection
/// sources) use [`Label::Unlabeled`] throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DenseMatrix,
    labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(features: DenseMatrix, labels: Vec<Label>) -> Result<Self> {
        ensure!(
            features.rows() == labels.len(),
            "dataset has {} feature rows but {} labels",
            features.rows(),
            labels.len()
        );
        Ok(Self { features, labels })
    }

    pub fn unlabeled(features: DenseMatrix) -> Self {
        let labels = vec![Label::Unlabeled; features.rows()];
        Self { features, labels }
    }

    pub fn empty(feature_dim: usize) -> Self {
        Self::unlabeled(DenseMatrix::zeros(0, feature_dim))
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn is_binary(&self) -> bool {
        self.features.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Row-wise concatenation. All parts must share a feature dimension.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        ensure!(!parts.is_empty(), "concat of zero datasets");
        let mats: Vec<&DenseMatrix> = parts.iter().map(|p| &p.features).collect();
        let features = DenseMatrix::vstack(&mats)?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Ok(Self { features, labels })
    }

    /// Labels as 0/1. Fails if any row is unlabeled.
    pub fn binary_labels(&self) -> Result<Vec<u8>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.as_bit()
                    .ok_or_else(|| Error::invalid(format!("row {i} is unlabeled")))
            })
            .collect()
    }

    /// Labels as `f64` training targets.
    pub fn targets(&self) -> Result<Vec<f64>> {
        Ok(self.binary_labels()?.into_iter().map(f64::from).collect())
    }
}
