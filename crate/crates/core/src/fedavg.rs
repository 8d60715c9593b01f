//! Federated averaging: each round the server sends the global model to the
//! clients, every client trains on its own data, and the server replaces the
//! global model by the sample-size-weighted mean of the client models.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{derive_seed, seeded_rng};
use crate::error::{ensure, Error, Result};
use crate::mlp::{init_mlp, run_epoch, AdamState, MlpModel, Samples, TrainConfig};

/// Clients taking part in each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum Participation {
    #[default]
    All,
    /// A fresh uniform sample of this many clients every round.
    Count(usize),
}

impl TryFrom<serde_json::Value> for Participation {
    type Error = String;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, String> {
        match v {
            serde_json::Value::String(s) if s == "all" => Ok(Self::All),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|d| Self::Count(d as usize))
                .ok_or_else(|| format!("participation must be a positive integer, got {n}")),
            other => Err(format!("participation must be \"all\" or a count, got {other}")),
        }
    }
}

impl From<Participation> for serde_json::Value {
    fn from(p: Participation) -> Self {
        match p {
            Participation::All => "all".into(),
            Participation::Count(d) => d.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    pub epochs_per_round: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub participation: Participation,
    pub train_config: TrainConfig,
    /// Start every client update with zero Adam moments. When false each
    /// client keeps its moments between rounds.
    pub reset_moments: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            epochs_per_round: 1,
            max_rounds: 300,
            patience: 10,
            participation: Participation::All,
            train_config: TrainConfig::default(),
            reset_moments: true,
        }
    }
}

impl FedConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        self.train_config.validate()?;
        ensure!(self.epochs_per_round >= 1, "epochs_per_round must be at least 1");
        ensure!(self.max_rounds >= 1, "max_rounds must be at least 1");
        ensure!(
            self.patience >= 1 && self.patience <= self.max_rounds,
            "patience must lie in 1..=max_rounds"
        );
        if let Participation::Count(d) = self.participation {
            ensure!(
                d >= 1 && d <= n_clients,
                "participating clients {d} outside 1..={n_clients}"
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRoundLog {
    pub round: usize,
    /// Sizes of the clients aggregated this round (all clients for round 0).
    pub client_sizes: Vec<usize>,
    pub val_loss: f64,
}

fn local_update(
    global: &MlpModel,
    local: Samples<'_>,
    config: &FedConfig,
    seed: u64,
    adam: &mut AdamState,
) -> Result<MlpModel> {
    ensure!(!local.is_empty(), "client has no data");
    let mut model = global.clone().with_dropout(&config.train_config.dropout_rates)?;
    let mut rng = seeded_rng(seed);
    for _ in 0..config.epochs_per_round {
        run_epoch(&mut model, adam, local, &config.train_config, &mut rng)?;
    }
    Ok(model)
}

/// `E` epochs of local training from the global parameters, with no
/// early stopping and fresh optimizer state.
pub fn client_update(global: &MlpModel, local: Samples<'_>, config: &FedConfig, seed: u64) -> Result<MlpModel> {
    config.train_config.validate()?;
    local_update(global, local, config, seed, &mut AdamState::new(global))
}

/// `Σ (s_k / s)·θ_k` per parameter. The result does not depend on client
/// order, and a parameter on which every client agrees is returned exactly.
pub fn aggregate(models: &[MlpModel], sample_sizes: &[usize]) -> Result<MlpModel> {
    ensure!(!models.is_empty(), "nothing to aggregate");
    ensure!(
        models.len() == sample_sizes.len(),
        "{} models but {} sample sizes",
        models.len(),
        sample_sizes.len()
    );
    ensure!(sample_sizes.iter().all(|&s| s > 0), "sample sizes must be positive");
    ensure!(
        models.iter().all(|m| m.same_architecture(&models[0])),
        "client models have different architectures"
    );
    let total: f64 = sample_sizes.iter().map(|&s| s as f64).sum();
    let mut out = models[0].clone();
    let sources: Vec<Vec<&[f64]>> = models.iter().map(|m| m.parameter_slices()).collect();
    let mut terms = Vec::with_capacity(models.len());
    for (t, target) in out.parameter_slices_mut().into_iter().enumerate() {
        for (i, value) in target.iter_mut().enumerate() {
            let first = sources[0][t][i];
            if sources.iter().all(|s| s[t][i].to_bits() == first.to_bits()) {
                *value = first;
                continue;
            }
            terms.clear();
            terms.extend(
                sources
                    .iter()
                    .zip(sample_sizes)
                    .map(|(s, &n)| n as f64 * s[t][i]),
            );
            terms.sort_by(f64::total_cmp);
            *value = terms.iter().sum::<f64>() / total;
        }
    }
    Ok(out)
}

/// Runs up to `max_rounds` rounds and returns the global model from the round
/// with the lowest validation loss (round 0 being the initial model).
pub fn fedavg_train(
    clients: &[Samples<'_>],
    valid: Samples<'_>,
    config: &FedConfig,
    seed: u64,
) -> Result<(MlpModel, Vec<FedRoundLog>)> {
    ensure!(!clients.is_empty(), "no clients");
    ensure!(clients.iter().all(|c| !c.is_empty()), "every client needs data");
    ensure!(!valid.is_empty(), "validation set is empty");
    config.validate(clients.len())?;
    let input_dim = clients[0].x.cols();
    ensure!(
        clients.iter().all(|c| c.x.cols() == input_dim),
        "clients disagree on the feature dimension"
    );

    let mut global = init_mlp(&config.train_config.layer_dims(input_dim), seed)?;
    let sizes: Vec<usize> = clients.iter().map(Samples::len).collect();
    let mut logs = vec![FedRoundLog {
        round: 0,
        client_sizes: sizes.clone(),
        val_loss: global.loss(valid)?,
    }];
    let mut best = global.clone();
    let mut best_loss = logs[0].val_loss;
    let mut since_best = 0;
    let mut moments: Vec<AdamState> = clients.iter().map(|_| AdamState::new(&global)).collect();

    for round in 1..=config.max_rounds {
        let selected: Vec<usize> = match config.participation {
            Participation::All => (0..clients.len()).collect(),
            Participation::Count(d) => {
                let mut picked =
                    index::sample(&mut seeded_rng(derive_seed(seed, round as u64)), clients.len(), d).into_vec();
                picked.sort_unstable();
                picked
            }
        };
        if config.reset_moments {
            for &k in &selected {
                moments[k] = AdamState::new(&global);
            }
        }
        let mut states: Vec<(usize, AdamState)> =
            selected.iter().map(|&k| (k, moments[k].clone())).collect();
        let updated = states
            .par_iter_mut()
            .map(|(k, adam)| {
                let client_seed = derive_seed(seed, ((round as u64) << 20) | *k as u64);
                local_update(&global, clients[*k], config, client_seed, adam)
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, adam) in states {
            moments[k] = adam;
        }
        let round_sizes: Vec<usize> = selected.iter().map(|&k| sizes[k]).collect();
        global = aggregate(&updated, &round_sizes)?;

        let val_loss = global.loss(valid)?;
        let finite = global.parameter_slices().iter().all(|t| t.iter().all(|v| v.is_finite()));
        if !finite || !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: round,
                loss: val_loss,
            });
        }
        logs.push(FedRoundLog {
            round,
            client_sizes: round_sizes,
            val_loss,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = global.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best, logs))
}

/// Round index of the returned model.
pub fn best_round(logs: &[FedRoundLog]) -> usize {
    let mut best = 0;
    for (i, log) in logs.iter().enumerate() {
        if log.val_loss < logs[best].val_loss {
            best = i;
        }
    }
    logs[best].round
}

/// `round,val_loss,client_sizes` with sizes joined by `;`.
pub fn format_round_logs_csv(logs: &[FedRoundLog]) -> String {
    let mut out = String::from("round,val_loss,client_sizes\n");
    for log in logs {
        let sizes: Vec<String> = log.client_sizes.iter().map(usize::to_string).collect();
        writeln!(out, "{},{:.16e},{}", log.round, log.val_loss, sizes.join(";")).unwrap();
    }
    out
}

pub fn write_round_logs_csv(logs: &[FedRoundLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_round_logs_csv(logs)).map_err(|e| Error::io(path, e))
}
