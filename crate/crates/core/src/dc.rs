//! Data collaboration: each user reduces its data with a private linear
//! projection, the server aligns the reduced representations through the
//! shared anchor set, and a single model is trained on the aligned data.
//!
//! The user side ([`dc_user_phase`], [`dcpd_user_phase`]) returns a
//! [`UserPhase`]: the [`IntermediateBundle`] that goes to the server and the
//! [`LocalTransform`] that stays with the user. [`server_collaboration`]
//! only ever sees bundles.

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{ensure, Result};
use crate::linalg::{solve_least_squares, truncated_svd, DenseMatrix};

/// `f(X) = (X − 1·meanᵀ)·weights`
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub weights: DenseMatrix,
}

impl Projection {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(
            x.cols() == self.input_dim(),
            "projection expects {} features, got {}",
            self.input_dim(),
            x.cols()
        );
        Ok(x.sub_row_vector(&self.mean).matmul(&self.weights))
    }
}

/// Offset subtracted from the concatenated projections to form `X̃_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Both `X̃_i` and `X̃_i^anc` are shifted by the column means of the
    /// user's anchor intermediate, so every user's data lands in one frame.
    #[default]
    AnchorMean,
    /// Each matrix is shifted by its own column means.
    OwnMean,
}

/// Data used to fit the first DCPd projection `f_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSource {
    #[default]
    OwnData,
    Anchor,
}

/// What a user sends to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateBundle {
    pub user_id: usize,
    pub x_tilde: DenseMatrix,
    pub x_anc_tilde: DenseMatrix,
    pub labels: Vec<u8>,
}

impl IntermediateBundle {
    pub fn dim(&self) -> usize {
        self.x_tilde.cols()
    }
}

/// What a user keeps: its projections and the centering offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTransform {
    pub projections: Vec<Projection>,
    pub offset: Vec<f64>,
}

impl LocalTransform {
    pub fn output_dim(&self) -> usize {
        self.projections.iter().map(Projection::output_dim).sum()
    }

    fn project(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let parts = self
            .projections
            .iter()
            .map(|p| p.apply(x))
            .collect::<Result<Vec<_>>>()?;
        DenseMatrix::hstack(&parts.iter().collect::<Vec<_>>())
    }

    /// Intermediate representation of raw rows.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.project(x)?.sub_row_vector(&self.offset))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPhase {
    pub bundle: IntermediateBundle,
    pub local: LocalTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollaborationModel {
    pub user_ids: Vec<usize>,
    /// `G_i` per user, in bundle order.
    pub g: Vec<DenseMatrix>,
    pub u1: DenseMatrix,
    /// Collaboration representations, user blocks stacked in bundle order.
    pub x_hat: DenseMatrix,
    pub y: Vec<u8>,
    /// Row range of each user's block in `x_hat`.
    pub blocks: Vec<std::ops::Range<usize>>,
}

impl CollaborationModel {
    pub fn collab_dim(&self) -> usize {
        self.u1.cols()
    }

    fn position(&self, user_id: usize) -> Result<usize> {
        self.user_ids
            .iter()
            .position(|&u| u == user_id)
            .ok_or_else(|| crate::Error::invalid(format!("unknown user id {user_id}")))
    }

    /// Maps a user's intermediate representation into the collaboration space.
    pub fn align(&self, user_id: usize, x_tilde: &DenseMatrix) -> Result<DenseMatrix> {
        let g = &self.g[self.position(user_id)?];
        ensure!(
            x_tilde.cols() == g.rows(),
            "user {user_id} intermediate has {} columns, expected {}",
            x_tilde.cols(),
            g.rows()
        );
        Ok(x_tilde.matmul(g))
    }
}

/// A collaboration model together with the users' local transforms, as
/// needed for scoring new data.
#[derive(Debug, Clone, PartialEq)]
pub struct DcPipeline {
    pub model: CollaborationModel,
    pub locals: Vec<LocalTransform>,
}

impl DcPipeline {
    pub fn new(phases: Vec<UserPhase>, k_collab: usize) -> Result<Self> {
        let (bundles, locals): (Vec<_>, Vec<_>) =
            phases.into_iter().map(|p| (p.bundle, p.local)).unzip();
        let model = server_collaboration(&bundles, k_collab)?;
        Ok(Self { model, locals })
    }

    pub fn user_ids(&self) -> &[usize] {
        &self.model.user_ids
    }

    /// `f_i(X_test)·G_i` through user `user_id`'s path.
    pub fn transform_test(&self, user_id: usize, x_test: &DenseMatrix) -> Result<DenseMatrix> {
        let local = &self.locals[self.model.position(user_id)?];
        self.model.align(user_id, &local.apply(x_test)?)
    }
}

/// Truncated-SVD reduction: centers `x` and keeps its top-`k` right singular
/// vectors.
pub fn fit_projection(x: &DenseMatrix, k: usize) -> Result<Projection> {
    ensure!(k >= 1, "projection dimension must be at least 1");
    ensure!(
        k <= x.rows().min(x.cols()) && k < x.cols(),
        "projection dimension {k} out of range for a {}x{} matrix",
        x.rows(),
        x.cols()
    );
    let mean = x.column_means();
    let centered = x.sub_row_vector(&mean);
    ensure!(
        centered.max_abs() > 1e-12 * x.max_abs().max(1.0),
        "zero-variance input: every row is identical"
    );
    let svd = truncated_svd(&centered, k)?;
    Ok(Projection {
        mean,
        weights: svd.v,
    })
}

fn check_dims(x: &LabeledDataset, other: &LabeledDataset, what: &str) -> Result<()> {
    ensure!(
        x.feature_dim() == other.feature_dim(),
        "{what} has {} features, user data has {}",
        other.feature_dim(),
        x.feature_dim()
    );
    Ok(())
}

fn finish_user_phase(
    user_id: usize,
    x: &LabeledDataset,
    x_anc: &LabeledDataset,
    projections: Vec<Projection>,
    centering: Centering,
) -> Result<UserPhase> {
    let mut local = LocalTransform {
        projections,
        offset: Vec::new(),
    };
    let anc_raw = local.project(x_anc.features())?;
    let anc_mean = anc_raw.column_means();
    local.offset = match centering {
        Centering::AnchorMean => anc_mean.clone(),
        Centering::OwnMean => local.project(x.features())?.column_means(),
    };
    let x_tilde = local.apply(x.features())?;
    let x_anc_tilde = anc_raw.sub_row_vector(&anc_mean);
    Ok(UserPhase {
        bundle: IntermediateBundle {
            user_id,
            x_tilde,
            x_anc_tilde,
            labels: x.binary_labels()?,
        },
        local,
    })
}

/// User side of DC: `f_i` fitted on the user's own features.
pub fn dc_user_phase(
    user_id: usize,
    x: &LabeledDataset,
    x_anc: &LabeledDataset,
    k: usize,
    centering: Centering,
) -> Result<UserPhase> {
    check_dims(x, x_anc, "anchor")?;
    let f = fit_projection(x.features(), k)?;
    finish_user_phase(user_id, x, x_anc, vec![f], centering)
}

/// User side of DCPd: `[f_i | f_i^p]`, with `f_i^p` fitted on the user's
/// projection data.
#[allow(clippy::too_many_arguments)]
pub fn dcpd_user_phase(
    user_id: usize,
    x: &LabeledDataset,
    x_anc: &LabeledDataset,
    x_proj: &LabeledDataset,
    k1: usize,
    k2: usize,
    centering: Centering,
    fit_source: FitSource,
) -> Result<UserPhase> {
    check_dims(x, x_anc, "anchor")?;
    check_dims(x, x_proj, "projection data")?;
    ensure!(
        k1 + k2 < x.feature_dim(),
        "k1 + k2 = {} must be below the feature dimension {}",
        k1 + k2,
        x.feature_dim()
    );
    let f = match fit_source {
        FitSource::OwnData => fit_projection(x.features(), k1)?,
        FitSource::Anchor => fit_projection(x_anc.features(), k1)?,
    };
    let fp = fit_projection(x_proj.features(), k2)?;
    finish_user_phase(user_id, x, x_anc, vec![f, fp], centering)
}

/// Server side: SVD of the concatenated anchor intermediates, then
/// `G_i = (X̃_i^anc)†·U₁` and `X̂_i = X̃_i·G_i`.
pub fn server_collaboration(bundles: &[IntermediateBundle], k_collab: usize) -> Result<CollaborationModel> {
    ensure!(!bundles.is_empty(), "no bundles");
    let a = bundles[0].x_anc_tilde.rows();
    for b in bundles {
        ensure!(
            b.x_anc_tilde.rows() == a,
            "user {} has {} anchor rows, expected {a}",
            b.user_id,
            b.x_anc_tilde.rows()
        );
        ensure!(
            b.x_tilde.cols() == b.x_anc_tilde.cols(),
            "user {} intermediate widths differ: {} vs {}",
            b.user_id,
            b.x_tilde.cols(),
            b.x_anc_tilde.cols()
        );
        ensure!(
            b.labels.len() == b.x_tilde.rows(),
            "user {} has {} rows but {} labels",
            b.user_id,
            b.x_tilde.rows(),
            b.labels.len()
        );
    }
    let mut ids: Vec<usize> = bundles.iter().map(|b| b.user_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ensure!(ids.len() == bundles.len(), "duplicate user ids");
    let total: usize = bundles.iter().map(IntermediateBundle::dim).sum();
    ensure!(
        k_collab >= 1 && k_collab <= a.min(total),
        "k_collab {k_collab} out of range 1..={}",
        a.min(total)
    );

    let anchors: Vec<&DenseMatrix> = bundles.iter().map(|b| &b.x_anc_tilde).collect();
    let u1 = truncated_svd(&DenseMatrix::hstack(&anchors)?, k_collab)?.u;
    let mut g = Vec::with_capacity(bundles.len());
    let mut hats = Vec::with_capacity(bundles.len());
    let mut blocks = Vec::with_capacity(bundles.len());
    let mut y = Vec::new();
    let mut start = 0;
    for b in bundles {
        let gi = solve_least_squares(&b.x_anc_tilde, &u1)?;
        hats.push(b.x_tilde.matmul(&gi));
        g.push(gi);
        blocks.push(start..start + b.labels.len());
        start += b.labels.len();
        y.extend_from_slice(&b.labels);
    }
    let x_hat = DenseMatrix::vstack(&hats.iter().collect::<Vec<_>>())?;
    Ok(CollaborationModel {
        user_ids: bundles.iter().map(|b| b.user_id).collect(),
        g,
        u1,
        x_hat,
        y,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{seeded_rng, Label};
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded_rng(seed);
        DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn labeled(x: DenseMatrix, label: u8) -> LabeledDataset {
        let n = x.rows();
        LabeledDataset::new(x, vec![Label::from_bit(label); n]).unwrap()
    }

    fn alternating(x: DenseMatrix) -> LabeledDataset {
        let labels = (0..x.rows()).map(|i| Label::from_bit((i % 2) as u8)).collect();
        LabeledDataset::new(x, labels).unwrap()
    }

    #[test]
    fn identical_rows_are_rejected() {
        let x = DenseMatrix::from_rows(&vec![vec![0.1, 0.7, 0.3]; 4]).unwrap();
        let err = fit_projection(&x, 1).unwrap_err();
        assert!(err.to_string().contains("zero-variance"), "{err}");
    }

    #[test]
    fn projection_range_checks() {
        let x = random(6, 4, 1);
        assert!(fit_projection(&x, 0).is_err());
        assert!(fit_projection(&x, 4).is_err());
        assert!(fit_projection(&random(3, 8, 1), 4).is_err());
        assert!(fit_projection(&x, 3).is_ok());
    }

    #[test]
    fn dominant_direction_in_2d() {
        let x = DenseMatrix::from_rows(&[vec![3.0, 0.1], vec![-3.0, -0.1], vec![2.0, -0.1], vec![-2.0, 0.1]]).unwrap();
        let p = fit_projection(&x, 1).unwrap();
        assert!((p.weights[(0, 0)].abs() - 1.0).abs() < 1e-3);
        assert!(p.weights[(1, 0)].abs() < 0.05);
        assert_eq!(p.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn scores_match_full_svd_oracle() {
        let x = random(50, 10, 7);
        let p = fit_projection(&x, 5).unwrap();
        let scores = p.apply(&x).unwrap();

        let mean = x.column_means();
        let centered = x.sub_row_vector(&mean);
        let na = nalgebra::DMatrix::from_row_slice(50, 10, centered.as_slice());
        let svd = na.svd(true, false);
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let u = svd.u.unwrap();
        for (c, &j) in order.iter().take(5).enumerate() {
            let ours = scores.column(c);
            let oracle: Vec<f64> = (0..50).map(|i| u[(i, j)] * svd.singular_values[j]).collect();
            // columns agree up to sign
            let sign = if ours.iter().zip(&oracle).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - sign * b).abs() <= 1e-9, "column {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dc_user_phase_bookkeeping() {
        let x = alternating(random(30, 6, 2));
        let anc = LabeledDataset::unlabeled(random(20, 6, 3));
        let phase = dc_user_phase(0, &x, &anc, 5, Centering::AnchorMean).unwrap();
        assert_eq!(phase.bundle.x_tilde.shape(), (30, 5));
        assert_eq!(phase.bundle.x_anc_tilde.shape(), (20, 5));
        assert_eq!(phase.bundle.labels.len(), 30);
        assert!(phase.bundle.x_anc_tilde.column_means().iter().all(|m| m.abs() < 1e-12));

        let again = dc_user_phase(1, &x, &anc, 5, Centering::AnchorMean).unwrap();
        assert_eq!(again.bundle.x_tilde, phase.bundle.x_tilde);
        assert_eq!(again.bundle.x_anc_tilde, phase.bundle.x_anc_tilde);

        let ones = labeled(random(30, 6, 2), 1);
        assert!(dc_user_phase(0, &ones, &anc, 3, Centering::AnchorMean).is_ok());
        let bad_anchor = LabeledDataset::unlabeled(random(20, 5, 3));
        assert!(dc_user_phase(0, &x, &bad_anchor, 3, Centering::AnchorMean).is_err());
    }

    #[test]
    fn centering_modes() {
        let x = alternating(random(30, 6, 2).map(|v| v + 2.0));
        let anc = LabeledDataset::unlabeled(random(20, 6, 3));
        let own = dc_user_phase(0, &x, &anc, 4, Centering::OwnMean).unwrap();
        assert!(own.bundle.x_tilde.column_means().iter().all(|m| m.abs() < 1e-12));
        let anchored = dc_user_phase(0, &x, &anc, 4, Centering::AnchorMean).unwrap();
        assert_eq!(own.bundle.x_anc_tilde, anchored.bundle.x_anc_tilde);
        // anchor centering keeps the user's offset from the anchor cloud
        assert!(anchored.bundle.x_tilde.column_means().iter().any(|m| m.abs() > 0.1));
    }

    #[test]
    fn dcpd_user_phase_shapes_and_errors() {
        let x = alternating(random(30, 8, 2));
        let anc = LabeledDataset::unlabeled(random(20, 8, 3));
        let proj_a = LabeledDataset::unlabeled(random(25, 8, 4));
        let proj_b = LabeledDataset::unlabeled(random(25, 8, 5));
        let a = dcpd_user_phase(0, &x, &anc, &proj_a, 3, 4, Centering::AnchorMean, FitSource::OwnData).unwrap();
        assert_eq!(a.bundle.dim(), 7);
        assert_eq!(a.local.projections.len(), 2);
        let b = dcpd_user_phase(0, &x, &anc, &proj_b, 3, 4, Centering::AnchorMean, FitSource::OwnData).unwrap();
        assert_ne!(a.bundle.x_anc_tilde, b.bundle.x_anc_tilde);
        assert_eq!(
            a.bundle.x_anc_tilde.select_columns(0..3),
            b.bundle.x_anc_tilde.select_columns(0..3)
        );
        assert!(dcpd_user_phase(0, &x, &anc, &proj_a, 4, 4, Centering::AnchorMean, FitSource::OwnData).is_err());

        // projection data equal to the user data is legal
        let same = LabeledDataset::unlabeled(x.features().clone());
        assert!(dcpd_user_phase(0, &x, &anc, &same, 3, 3, Centering::AnchorMean, FitSource::OwnData).is_ok());

        let lit = dcpd_user_phase(0, &x, &anc, &proj_a, 3, 4, Centering::AnchorMean, FitSource::Anchor).unwrap();
        assert_eq!(lit.local.projections[0], fit_projection(anc.features(), 3).unwrap());
    }

    fn bundle(user_id: usize, x_anc_tilde: DenseMatrix, x_tilde: DenseMatrix) -> IntermediateBundle {
        let n = x_tilde.rows();
        IntermediateBundle {
            user_id,
            x_tilde,
            x_anc_tilde,
            labels: (0..n).map(|i| (i % 2) as u8).collect(),
        }
    }

    #[test]
    fn single_user_recovers_u1() {
        let b = bundle(0, random(12, 4, 1), random(5, 4, 2));
        let m = server_collaboration(std::slice::from_ref(&b), 4).unwrap();
        let err = b.x_anc_tilde.matmul(&m.g[0]).sub(&m.u1).frobenius_norm();
        assert!(err <= 1e-10, "{err}");
        assert_eq!(m.x_hat.shape(), (5, 4));
    }

    #[test]
    fn identical_bundles_align_identically() {
        let b0 = bundle(0, random(12, 4, 1), random(5, 4, 2));
        let b1 = IntermediateBundle { user_id: 1, ..b0.clone() };
        let m = server_collaboration(&[b0.clone(), b1], 3).unwrap();
        assert_eq!(m.g[0], m.g[1]);
        assert_eq!(m.x_hat.select_rows(&[0, 1, 2, 3, 4]), m.x_hat.select_rows(&[5, 6, 7, 8, 9]));
        assert_eq!(m.blocks, vec![0..5, 5..10]);
        assert_eq!(m.y.len(), 10);
    }

    #[test]
    fn three_users_agree_on_anchor() {
        // wide full-row-rank anchor blocks: each user's range is all of R^a
        let bundles: Vec<_> = (0..3)
            .map(|u| bundle(u, random(6, 8 + u, 10 + u as u64), random(4, 8 + u, 20 + u as u64)))
            .collect();
        let m = server_collaboration(&bundles, 4).unwrap();
        let hats: Vec<_> = bundles.iter().zip(&m.g).map(|(b, g)| b.x_anc_tilde.matmul(g)).collect();
        let scale = m.u1.frobenius_norm();
        for i in 0..3 {
            for j in 0..3 {
                assert!(hats[i].sub(&hats[j]).frobenius_norm() <= 1e-6 * scale);
            }
        }
        assert_eq!(m.x_hat.cols(), 4);
    }

    #[test]
    fn server_errors() {
        let b0 = bundle(0, random(12, 4, 1), random(5, 4, 2));
        let short = bundle(1, random(11, 4, 1), random(5, 4, 2));
        assert!(server_collaboration(&[b0.clone(), short], 2).is_err());
        assert!(server_collaboration(std::slice::from_ref(&b0), 5).is_err());
        assert!(server_collaboration(std::slice::from_ref(&b0), 0).is_err());
        assert!(server_collaboration(&[], 1).is_err());
        assert!(server_collaboration(&[b0.clone(), b0], 2).is_err());
    }

    #[test]
    fn transform_test_paths() {
        let anc = LabeledDataset::unlabeled(random(20, 6, 3));
        let users: Vec<_> = (0..2).map(|u| alternating(random(15, 6, 40 + u))).collect();
        let phases: Vec<_> = users
            .iter()
            .enumerate()
            .map(|(u, x)| dc_user_phase(u, x, &anc, 3, Centering::AnchorMean).unwrap())
            .collect();
        let pipe = DcPipeline::new(phases, 4).unwrap();
        for (u, x) in users.iter().enumerate() {
            let t = pipe.transform_test(u, x.features()).unwrap();
            let block = pipe.model.x_hat.select_rows(&pipe.model.blocks[u].clone().collect::<Vec<_>>());
            assert_eq!(t, block);
        }
        let empty = pipe.transform_test(0, &DenseMatrix::zeros(0, 6)).unwrap();
        assert_eq!(empty.shape(), (0, 4));
        assert!(pipe.transform_test(7, users[0].features()).is_err());
        assert!(pipe.transform_test(0, &DenseMatrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn identical_users_share_test_transform() {
        let anc = LabeledDataset::unlabeled(random(20, 6, 3));
        let x = alternating(random(15, 6, 40));
        let phases = (0..2)
            .map(|u| dc_user_phase(u, &x, &anc, 3, Centering::AnchorMean).unwrap())
            .collect();
        let pipe = DcPipeline::new(phases, 3).unwrap();
        let probe = random(7, 6, 99);
        assert_eq!(pipe.transform_test(0, &probe).unwrap(), pipe.transform_test(1, &probe).unwrap());
    }
}
