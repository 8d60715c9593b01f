use rand::seq::SliceRandom;

use super::partition::largest_remainder;
use super::{seeded_rng, Label, LabeledDataset};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainValidTest {
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
    pub test: LabeledDataset,
}

/// Stratified three-way split.
///
/// Each label stratum is shuffled and its members placed at evenly spaced
/// positions in `[0, 1)`; merging the strata by position and cutting the
/// merged sequence at the split sizes gives every split each label's share
/// to within one sample.
pub fn split_train_valid_test(
    d: &LabeledDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<TrainValidTest> {
    ensure!(
        fractions.iter().all(|&f| f > 0.0),
        "split fractions must be positive: {fractions:?}"
    );
    ensure!(
        (fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
        "split fractions must sum to 1: {fractions:?}"
    );
    let sizes = largest_remainder(d.len(), &fractions);
    ensure!(
        sizes.iter().all(|&s| s > 0),
        "split of {} samples by {:?} leaves an empty part",
        d.len(),
        fractions
    );

    let mut rng = seeded_rng(seed);
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(d.len());
    for (stratum, label) in [Label::Zero, Label::One, Label::Unlabeled].into_iter().enumerate() {
        let mut rows: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == label).collect();
        rows.shuffle(&mut rng);
        let n = rows.len() as f64;
        for (pos, i) in rows.into_iter().enumerate() {
            keyed.push(((pos as f64 + 0.5) / n, stratum, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();

    let (train, rest) = order.split_at(sizes[0]);
    let (valid, test) = rest.split_at(sizes[1]);
    Ok(TrainValidTest {
        train: d.subset(train),
        valid: d.subset(valid),
        test: d.subset(test),
    })
}
