use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AnchorKind, ExperimentConfig, Method, PartitionConfig, TestTransform};
use crate::datasets::{
    derive_seed, generate_anchor, generate_synthetic_fingerprint_dataset, load_dataset, partition_iid,
    partition_label_bias, sample_anchor_from_pool, sample_projection_data, split_train_valid_test,
    AnchorSpec, AnchorStrategy, Label, LabeledDataset, PartitionPlan, SyntheticFamily, TrainValidTest,
};
use crate::dc::{dc_user_phase, dcpd_user_phase, DcPipeline};
use crate::error::{Error, Result};
use crate::fedavg::fedavg_train;
use crate::linalg::DenseMatrix;
use crate::metrics::{pr_auc, roc_auc, MetricsReport, ScoredLabels};
use crate::mlp::{init_mlp, predict, train, MlpModel, Samples, TrainConfig};

const SPLIT_STREAM: u64 = 0;
const PARTITION_STREAM: u64 = 1;
const ANCHOR_STREAM: u64 = 2;
const PROJECTION_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;
const POOL_STREAM: u64 = 5;

/// One repetition of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub r: Option<f64>,
    pub repetition: usize,
    pub seed: u64,
    /// Hash of the partition plan; absent for centralized runs.
    pub plan_hash: Option<String>,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub r: Option<f64>,
    pub runs: Vec<RunRecord>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub r_values: Vec<f64>,
    pub methods: Vec<Method>,
    /// Method-major: all r values for `methods[0]`, then `methods[1]`, ...
    pub cells: Vec<ExperimentReport>,
}

impl SweepResult {
    pub fn cell(&self, method: Method, r: f64) -> Option<&ExperimentReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.r == Some(r))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Data shared by every repetition: the fixed split and the public pools.
struct Prepared {
    split: TrainValidTest,
    anchor_pool: Option<LabeledDataset>,
    projection_pool: Option<LabeledDataset>,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let (data, synthetic_pool) = match (&config.dataset_path, &config.synthetic) {
        (Some(path), _) => (load_dataset(path)?, None),
        (None, Some(s)) => {
            let data = generate_synthetic_fingerprint_dataset(
                s.n_per_class,
                s.dims,
                s.template_density,
                s.flip_prob,
                s.seed,
            )?;
            let family = SyntheticFamily::new(s.dims, s.template_density, s.flip_prob, s.seed)?;
            (data, Some(family.sample_pool(s.pool_size, derive_seed(s.seed, POOL_STREAM))))
        }
        (None, None) => return Err(Error::Config("no data source".into())),
    };
    if data.count(Label::Unlabeled) > 0 {
        return Err(Error::Config("experiment data must be fully labeled".into()));
    }
    let split = split_train_valid_test(&data, config.split, derive_seed(config.base_seed, SPLIT_STREAM))?;

    let dc_like = matches!(config.method, Method::Dc | Method::Dcpd);
    let anchor_pool = match (&config.anchor.pool_path, config.anchor.strategy) {
        (Some(path), AnchorKind::PoolSample) if dc_like => Some(load_dataset(path)?),
        _ => synthetic_pool.clone(),
    };
    let projection_pool = match &config.projection_pool_path {
        Some(path) if config.method == Method::Dcpd => Some(load_dataset(path)?),
        _ => synthetic_pool,
    };
    Ok(Prepared {
        split,
        anchor_pool,
        projection_pool,
    })
}

fn pool_dim_check(pool: &LabeledDataset, m: usize, what: &str) -> Result<()> {
    if pool.feature_dim() != m {
        return Err(Error::Config(format!(
            "{what} pool has {} features, data has {m}",
            pool.feature_dim()
        )));
    }
    Ok(())
}

fn partition(config: &ExperimentConfig, train_set: &LabeledDataset, seed: u64) -> Result<PartitionPlan> {
    if config.n_users == 1 {
        return Ok(PartitionPlan {
            n_users: 1,
            assignments: vec![(0..train_set.len()).collect()],
            bias_r: None,
            seed,
        });
    }
    match config.partition {
        PartitionConfig::Iid => partition_iid(train_set, config.n_users, seed),
        PartitionConfig::LabelBias { r } => partition_label_bias(train_set, r, seed),
    }
}

fn anchor_set(config: &ExperimentConfig, prepared: &Prepared, m: usize, seed: u64) -> Result<LabeledDataset> {
    let a = &config.anchor;
    let strategy = match a.strategy {
        AnchorKind::Uniform01 => AnchorStrategy::Uniform01,
        AnchorKind::Binary01 => AnchorStrategy::Binary01 {
            density: a.binary_density,
        },
        AnchorKind::PoolSample => {
            let pool = prepared
                .anchor_pool
                .as_ref()
                .ok_or_else(|| Error::Config("pool_sample anchors need a pool".into()))?;
            pool_dim_check(pool, m, "anchor")?;
            return sample_anchor_from_pool(pool, a.count, seed);
        }
    };
    generate_anchor(
        &AnchorSpec {
            strategy,
            count: a.count,
            seed,
        },
        m,
    )
}

fn fit_and_score(
    train_x: &DenseMatrix,
    train_y: &[f64],
    valid_x: &DenseMatrix,
    valid_y: &[f64],
    tc: &TrainConfig,
    seed: u64,
) -> Result<MlpModel> {
    let model = init_mlp(&tc.layer_dims(train_x.cols()), seed)?;
    let tc = TrainConfig {
        seed: derive_seed(seed, 1),
        ..tc.clone()
    };
    let (best, _) = train(
        &model,
        Samples::new(train_x, train_y)?,
        Samples::new(valid_x, valid_y)?,
        &tc,
    )?;
    Ok(best)
}

fn dc_scores(
    config: &ExperimentConfig,
    prepared: &Prepared,
    users: &[LabeledDataset],
    rep_seed: u64,
) -> Result<Vec<f64>> {
    let split = &prepared.split;
    let m = split.train.feature_dim();
    let anchor = anchor_set(config, prepared, m, derive_seed(rep_seed, ANCHOR_STREAM))?;
    let projection_seed = derive_seed(rep_seed, PROJECTION_STREAM);
    let phases = users
        .par_iter()
        .enumerate()
        .map(|(u, x)| match config.method {
            Method::Dc => dc_user_phase(
                u,
                x,
                &anchor,
                config.intermediate_dim.unwrap_or_default(),
                config.centering,
            ),
            _ => {
                let pool = prepared
                    .projection_pool
                    .as_ref()
                    .ok_or_else(|| Error::Config("dcpd needs a projection pool".into()))?;
                pool_dim_check(pool, m, "projection")?;
                let proj = sample_projection_data(pool, config.projection_count, derive_seed(projection_seed, u as u64))?;
                let [k1, k2] = config.projection_dims.unwrap_or_default();
                dcpd_user_phase(u, x, &anchor, &proj, k1, k2, config.centering, config.dcpd_fit_source)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pipe = DcPipeline::new(phases, config.collab_dim)?;

    let paths: Vec<usize> = match config.test_transform_user {
        TestTransform::Average => pipe.user_ids().to_vec(),
        TestTransform::User(u) => vec![u],
    };
    let valid_y_one = split.valid.targets()?;
    let mut valid_parts = Vec::with_capacity(paths.len());
    let mut valid_y = Vec::with_capacity(paths.len() * valid_y_one.len());
    for &u in &paths {
        valid_parts.push(pipe.transform_test(u, split.valid.features())?);
        valid_y.extend_from_slice(&valid_y_one);
    }
    let valid_x = DenseMatrix::vstack(&valid_parts.iter().collect::<Vec<_>>())?;
    let y_hat: Vec<f64> = pipe.model.y.iter().map(|&v| f64::from(v)).collect();
    let model = fit_and_score(
        &pipe.model.x_hat,
        &y_hat,
        &valid_x,
        &valid_y,
        &config.train_config,
        derive_seed(rep_seed, TRAIN_STREAM),
    )?;

    let mut scores = vec![0.0; split.test.len()];
    for &u in &paths {
        let s = predict(&model, &pipe.transform_test(u, split.test.features())?)?;
        for (acc, v) in scores.iter_mut().zip(s) {
            *acc += v;
        }
    }
    let n = paths.len() as f64;
    scores.iter_mut().for_each(|s| *s /= n);
    Ok(scores)
}

fn run_once(config: &ExperimentConfig, prepared: &Prepared, repetition: usize) -> Result<RunRecord> {
    let split = &prepared.split;
    let rep_seed = config.base_seed.wrapping_add(repetition as u64);
    let train_seed = derive_seed(rep_seed, TRAIN_STREAM);
    let valid_y = split.valid.targets()?;

    let (scores, plan_hash) = if config.method == Method::Centralized {
        let model = fit_and_score(
            split.train.features(),
            &split.train.targets()?,
            split.valid.features(),
            &valid_y,
            &config.train_config,
            train_seed,
        )?;
        (predict(&model, split.test.features())?, None)
    } else {
        let plan = partition(config, &split.train, derive_seed(rep_seed, PARTITION_STREAM))?;
        let users = plan.apply(&split.train);
        let scores = match config.method {
            Method::Fedavg => {
                let targets = users.iter().map(LabeledDataset::targets).collect::<Result<Vec<_>>>()?;
                let clients = users
                    .iter()
                    .zip(&targets)
                    .map(|(u, y)| Samples::new(u.features(), y))
                    .collect::<Result<Vec<_>>>()?;
                let mut fed = config.fed_config.clone();
                fed.train_config = config.train_config.clone();
                let valid = Samples::new(split.valid.features(), &valid_y)?;
                let (model, _) = fedavg_train(&clients, valid, &fed, train_seed)?;
                predict(&model, split.test.features())?
            }
            _ => dc_scores(config, prepared, &users, rep_seed)?,
        };
        (scores, Some(plan.hash()))
    };

    let labels = split.test.binary_labels()?;
    let scored = ScoredLabels::new(&scores, &labels)?;
    Ok(RunRecord {
        method: config.method,
        r: config.partition.r(),
        repetition,
        seed: rep_seed,
        plan_hash,
        roc_auc: roc_auc(scored)?,
        pr_auc: pr_auc(scored)?,
    })
}

fn run_prepared(config: &ExperimentConfig, prepared: &Prepared) -> Result<ExperimentReport> {
    config.validate()?;
    // the centralized model does not depend on the partition
    let n_runs = if config.method == Method::Centralized { 1 } else { config.repetitions };
    let runs = (0..n_runs)
        .into_par_iter()
        .map(|rep| run_once(config, prepared, rep))
        .collect::<Result<Vec<_>>>()?;
    let metrics = MetricsReport::from_runs(
        runs.iter().map(|r| r.roc_auc).collect(),
        runs.iter().map(|r| r.pr_auc).collect(),
    )?;
    Ok(ExperimentReport {
        method: config.method,
        r: config.partition.r(),
        runs,
        metrics,
    })
}

/// All repetitions of the configured method on the test split.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    run_prepared(config, &prepare(config)?)
}

/// Every method at every label-bias level. Cells at the same r and
/// repetition see the same partition plan.
pub fn run_sweep(config: &ExperimentConfig, r_values: &[f64], methods: &[Method]) -> Result<SweepResult> {
    if let Some(r) = r_values.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("bias r={r} outside [0, 1]")));
    }
    let cells: Vec<ExperimentConfig> = methods
        .iter()
        .flat_map(|&method| {
            r_values.iter().map(move |&r| ExperimentConfig {
                method,
                partition: PartitionConfig::LabelBias { r },
                ..config.clone()
            })
        })
        .collect();
    for c in &cells {
        c.validate()?;
    }
    // pools depend only on data settings, so the DCPd cell's preparation serves all
    let prepared = match cells.iter().max_by_key(|c| c.method) {
        Some(c) => Some(prepare(c)?),
        None => None,
    };
    let reports = cells
        .par_iter()
        .map(|c| run_prepared(c, prepared.as_ref().expect("cells imply preparation")))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        r_values: r_values.to_vec(),
        methods: methods.to_vec(),
        cells: reports,
    })
}
