//! Synthetic stand-in for fingerprint data: each class has a template bit
//! vector and samples are the template with independent bit flips.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{seeded_rng, Label, LabeledDataset};
use crate::error::{ensure, Result};
use crate::linalg::DenseMatrix;

/// The two class templates plus the flip noise. Labeled datasets and
/// unlabeled public pools drawn from one family share the same templates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamily {
    templates: [Vec<u8>; 2],
    flip_prob: f64,
}

impl SyntheticFamily {
    pub fn new(m: usize, template_density: f64, flip_prob: f64, seed: u64) -> Result<Self> {
        Self::with_rng(m, template_density, flip_prob, &mut seeded_rng(seed))
    }

    fn with_rng(m: usize, template_density: f64, flip_prob: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        ensure!(m >= 8, "synthetic fingerprints need m >= 8, got {m}");
        ensure!(
            template_density > 0.0 && template_density < 1.0,
            "template density {template_density} outside (0, 1)"
        );
        ensure!(
            (0.0..0.5).contains(&flip_prob),
            "flip probability {flip_prob} outside [0, 0.5)"
        );
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..m).map(|_| rng.random_bool(template_density) as u8).collect()
        };
        let t0 = draw(rng);
        let mut t1 = draw(rng);
        // identical templates would make the task unlearnable
        while t1 == t0 {
            t1 = draw(rng);
        }
        Ok(Self {
            templates: [t0, t1],
            flip_prob,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.templates[0].len()
    }

    pub fn template(&self, class: usize) -> &[u8] {
        &self.templates[class]
    }

    fn noisy_row(&self, class: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        for &bit in &self.templates[class] {
            let flipped = rng.random_bool(self.flip_prob);
            out.push(f64::from(bit ^ flipped as u8));
        }
    }

    /// `n_per_class` class-0 rows followed by `n_per_class` class-1 rows.
    pub fn sample_labeled(&self, n_per_class: usize, rng: &mut ChaCha8Rng) -> LabeledDataset {
        let m = self.feature_dim();
        let mut data = Vec::with_capacity(2 * n_per_class * m);
        let mut labels = Vec::with_capacity(2 * n_per_class);
        for class in 0..2 {
            for _ in 0..n_per_class {
                self.noisy_row(class, rng, &mut data);
                labels.push(Label::from_bit(class as u8));
            }
        }
        LabeledDataset::new(DenseMatrix::from_vec(labels.len(), m, data), labels)
            .expect("row count matches label count")
    }

    /// Unlabeled rows, each from a uniformly chosen class.
    pub fn sample_pool(&self, n: usize, seed: u64) -> LabeledDataset {
        let mut rng = seeded_rng(seed);
        let m = self.feature_dim();
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            let class = rng.random_bool(0.5) as usize;
            self.noisy_row(class, &mut rng, &mut data);
        }
        LabeledDataset::unlabeled(DenseMatrix::from_vec(n, m, data))
    }
}

/// Balanced two-class dataset; templates and noise both come from `seed`.
/// Use [`SyntheticFamily::new`] with the same arguments to draw matching pools.
pub fn generate_synthetic_fingerprint_dataset(
    n_per_class: usize,
    m: usize,
    template_density: f64,
    flip_prob: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = seeded_rng(seed);
    let family = SyntheticFamily::with_rng(m, template_density, flip_prob, &mut rng)?;
    Ok(family.sample_labeled(n_per_class, &mut rng))
}
