use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dc::{Centering, FitSource};
use crate::error::{Error, Result};
use crate::fedavg::FedConfig;
use crate::mlp::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Centralized,
    Fedavg,
    Dc,
    Dcpd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Centralized, Method::Fedavg, Method::Dc, Method::Dcpd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::Fedavg => "fedavg",
            Method::Dc => "dc",
            Method::Dcpd => "dcpd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the generated two-template fingerprint task. The public
/// pool (anchor and projection source) is drawn from the same templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub dims: usize,
    #[serde(default = "default_template_density")]
    pub template_density: f64,
    pub flip_prob: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
}

fn default_template_density() -> f64 {
    0.1
}

fn default_pool_size() -> usize {
    5000
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartitionConfig {
    #[default]
    Iid,
    LabelBias {
        r: f64,
    },
}

impl PartitionConfig {
    pub fn r(&self) -> Option<f64> {
        match self {
            PartitionConfig::Iid => None,
            PartitionConfig::LabelBias { r } => Some(*r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Uniform01,
    Binary01,
    #[default]
    PoolSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub strategy: AnchorKind,
    pub count: usize,
    /// Pool file for `pool_sample`; the synthetic public pool when absent.
    pub pool_path: Option<PathBuf>,
    pub binary_density: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            strategy: AnchorKind::PoolSample,
            count: 3000,
            pool_path: None,
            binary_density: 0.5,
        }
    }
}

/// Which users' transform paths score the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum TestTransform {
    /// Mean score over every user's path.
    #[default]
    Average,
    User(usize),
}

impl TryFrom<serde_json::Value> for TestTransform {
    type Error = String;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, String> {
        match v {
            serde_json::Value::String(s) if s == "average" => Ok(Self::Average),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|u| Self::User(u as usize))
                .ok_or_else(|| format!("test_transform_user must be a user index, got {n}")),
            other => Err(format!("test_transform_user must be \"average\" or an index, got {other}")),
        }
    }
}

impl From<TestTransform> for serde_json::Value {
    fn from(t: TestTransform) -> Self {
        match t {
            TestTransform::Average => "average".into(),
            TestTransform::User(u) => u.into(),
        }
    }
}

/// A complete experiment. `fed_config.train_config` is ignored: every
/// method trains with `train_config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset_path: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    pub split: [f64; 3],
    pub n_users: usize,
    pub partition: PartitionConfig,
    pub anchor: AnchorConfig,
    pub projection_pool_path: Option<PathBuf>,
    pub projection_count: usize,
    /// `k` for DC.
    pub intermediate_dim: Option<usize>,
    /// `(k1, k2)` for DCPd.
    pub projection_dims: Option<[usize; 2]>,
    pub collab_dim: usize,
    pub centering: Centering,
    pub dcpd_fit_source: FitSource,
    pub train_config: TrainConfig,
    pub fed_config: FedConfig,
    pub repetitions: usize,
    pub base_seed: u64,
    pub test_transform_user: TestTransform,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Dc,
            dataset_path: None,
            synthetic: None,
            split: [0.8, 0.1, 0.1],
            n_users: 4,
            partition: PartitionConfig::Iid,
            anchor: AnchorConfig::default(),
            projection_pool_path: None,
            projection_count: 20000,
            intermediate_dim: None,
            projection_dims: None,
            collab_dim: 100,
            centering: Centering::AnchorMean,
            dcpd_fit_source: FitSource::OwnData,
            train_config: TrainConfig::default(),
            fed_config: FedConfig::default(),
            repetitions: 5,
            base_seed: 0,
            test_transform_user: TestTransform::Average,
        }
    }
}

macro_rules! config_ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(Error::Config(format!($($fmt)+)));
        }
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        config_ensure!(
            self.dataset_path.is_some() != self.synthetic.is_some(),
            "exactly one of dataset_path and synthetic must be given"
        );
        if let Some(s) = &self.synthetic {
            config_ensure!(s.n_per_class > 0 && s.dims > 0, "synthetic sizes must be positive");
            config_ensure!(s.pool_size > 0, "synthetic pool_size must be positive");
        }
        config_ensure!(self.n_users >= 1, "n_users must be at least 1");
        config_ensure!(self.repetitions >= 1, "repetitions must be at least 1");
        config_ensure!(self.collab_dim >= 1, "collab_dim must be positive");
        config_ensure!(self.anchor.count >= 1, "anchor count must be positive");
        config_ensure!(self.projection_count >= 1, "projection_count must be positive");
        if let PartitionConfig::LabelBias { r } = self.partition {
            config_ensure!((0.0..=1.0).contains(&r), "bias r={r} outside [0, 1]");
            config_ensure!(self.n_users == 4, "label_bias partitioning is defined for 4 users");
        }
        self.train_config
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut fed = self.fed_config.clone();
        fed.train_config = self.train_config.clone();
        fed.validate(self.n_users)
            .map_err(|e| Error::Config(e.to_string()))?;
        let synthetic = self.synthetic.is_some();
        match self.method {
            Method::Dc => {
                config_ensure!(
                    self.intermediate_dim.is_some_and(|k| k >= 1),
                    "method dc needs a positive intermediate_dim"
                );
            }
            Method::Dcpd => {
                config_ensure!(
                    self.projection_dims.is_some_and(|[a, b]| a >= 1 && b >= 1),
                    "method dcpd needs positive projection_dims [k1, k2]"
                );
                config_ensure!(
                    synthetic || self.projection_pool_path.is_some(),
                    "method dcpd needs projection_pool_path"
                );
            }
            _ => {}
        }
        if matches!(self.method, Method::Dc | Method::Dcpd) {
            config_ensure!(
                synthetic || self.anchor.strategy != AnchorKind::PoolSample || self.anchor.pool_path.is_some(),
                "pool_sample anchors need anchor.pool_path"
            );
            if let TestTransform::User(u) = self.test_transform_user {
                config_ensure!(u < self.n_users, "test_transform_user {u} is not a user");
            }
        }
        Ok(())
    }
}
