use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{seeded_rng, Label, LabeledDataset};
use crate::error::{ensure, Result};

/// Assignment of training rows to users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_users: usize,
    /// One ascending index list per user.
    pub assignments: Vec<Vec<usize>>,
    pub bias_r: Option<f64>,
    pub seed: u64,
}

impl PartitionPlan {
    /// SHA-256 over the user count and every assignment, hex encoded. Two
    /// plans with the same hash deal the same rows to the same users.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_users as u64).to_le_bytes());
        for user in &self.assignments {
            h.update((user.len() as u64).to_le_bytes());
            for &i in user {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn apply(&self, d: &LabeledDataset) -> Vec<LabeledDataset> {
        self.assignments.iter().map(|idx| d.subset(idx)).collect()
    }

    /// `counts[user][label]` for labels 0 and 1.
    pub fn label_counts(&self, d: &LabeledDataset) -> Vec<[usize; 2]> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut c = [0, 0];
                for &i in idx {
                    match d.labels()[i] {
                        Label::Zero => c[0] += 1,
                        Label::One => c[1] += 1,
                        Label::Unlabeled => {}
                    }
                }
                c
            })
            .collect()
    }
}

/// Shuffles rows and deals them round-robin, so user sizes differ by at most one.
pub fn partition_iid(d: &LabeledDataset, n_users: usize, seed: u64) -> Result<PartitionPlan> {
    ensure!(n_users >= 2, "partition_iid needs at least 2 users, got {n_users}");
    ensure!(
        n_users <= d.len(),
        "cannot deal {} samples to {} users",
        d.len(),
        n_users
    );
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut assignments = vec![Vec::new(); n_users];
    for (pos, i) in order.into_iter().enumerate() {
        assignments[pos % n_users].push(i);
    }
    assignments.iter_mut().for_each(|a| a.sort_unstable());
    Ok(PartitionPlan {
        n_users,
        assignments,
        bias_r: None,
        seed,
    })
}

/// Four-user label-skew split. Label-0 rows go to users 1–4 in proportions
/// (25+25r)%, (25+25r)%, (25−25r)%, (25−25r)%; label-1 rows in the mirrored
/// proportions. `r = 0` is balanced, `r = 1` gives single-label users.
pub fn partition_label_bias(d: &LabeledDataset, r: f64, seed: u64) -> Result<PartitionPlan> {
    ensure!((0.0..=1.0).contains(&r), "bias r={r} outside [0, 1]");
    let high = 0.25 + 0.25 * r;
    let low = 0.25 - 0.25 * r;
    let proportions = [[high, high, low, low], [low, low, high, high]];

    let mut rng = seeded_rng(seed);
    let mut assignments = vec![Vec::new(); 4];
    for (label, props) in [Label::Zero, Label::One].into_iter().zip(proportions) {
        let mut rows: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == label).collect();
        ensure!(!rows.is_empty(), "label-bias partition needs both classes; {label:?} is missing");
        rows.shuffle(&mut rng);
        let counts = largest_remainder(rows.len(), &props);
        let mut start = 0;
        for (user, c) in counts.into_iter().enumerate() {
            assignments[user].extend_from_slice(&rows[start..start + c]);
            start += c;
        }
    }
    assignments.iter_mut().for_each(|a| a.sort_unstable());
    Ok(PartitionPlan {
        n_users: 4,
        assignments,
        bias_r: Some(r),
        seed,
    })
}

/// Hamilton apportionment of `total` items by `weights` (summing to 1).
/// Ties in the remainder go to the lower index.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    // round quotas to kill representation noise such as 0.3·40 = 11.999…
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| (total as f64 * w * 1e9).round() / 1e9)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
