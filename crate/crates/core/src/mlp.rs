//! Feed-forward binary classifier: ReLU hidden layers, inverted dropout,
//! a logistic output unit, binary cross-entropy, and minibatch Adam (or
//! plain SGD) with validation-loss early stopping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::seeded_rng;
use crate::error::{ensure, Error, Result};
use crate::linalg::DenseMatrix;

/// Logits are clamped to this magnitude inside the loss.
pub const LOGIT_CLAMP: f64 = 30.0;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const CHECKPOINT_HEADER: &str = "#dcsim-mlp v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
    dropout_rates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    /// Plain `θ ← θ − λ∇L`.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![2000, 1000],
            dropout_rates: vec![0.4, 0.4],
            minibatch_size: 25,
            learning_rate: 0.00002,
            max_epochs: 300,
            patience: 10,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.hidden_layers.is_empty(), "at least one hidden layer is required");
        ensure!(
            self.hidden_layers.iter().all(|&h| h > 0),
            "hidden layer sizes must be positive"
        );
        ensure!(
            self.dropout_rates.len() == self.hidden_layers.len(),
            "{} dropout rates for {} hidden layers",
            self.dropout_rates.len(),
            self.hidden_layers.len()
        );
        ensure!(
            self.dropout_rates.iter().all(|p| (0.0..1.0).contains(p)),
            "dropout rates must lie in [0, 1)"
        );
        ensure!(self.minibatch_size > 0, "minibatch size must be positive");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive"
        );
        ensure!(self.max_epochs > 0, "max_epochs must be positive");
        ensure!(
            self.patience > 0 && self.patience <= self.max_epochs,
            "patience must lie in 1..=max_epochs"
        );
        Ok(())
    }

    /// `[input, hidden..., 1]`
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(1);
        dims
    }
}

/// Losses are evaluated in evaluation mode. Index 0 holds the losses of the
/// starting parameters, index `e` those after epoch `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_valid_loss(&self) -> f64 {
        self.valid_loss[self.best_epoch]
    }
}

/// Features with their 0/1 targets.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a DenseMatrix,
    pub y: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a DenseMatrix, y: &'a [f64]) -> Result<Self> {
        ensure!(
            x.rows() == y.len(),
            "{} feature rows but {} targets",
            x.rows(),
            y.len()
        );
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Per-parameter tensors with the model's shapes; used for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(DenseMatrix::as_slice)
            .chain(self.biases.iter().map(Vec::as_slice))
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(DenseMatrix::as_mut_slice)
            .chain(self.biases.iter_mut().map(Vec::as_mut_slice))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Gradients,
    second: Gradients,
    step: i32,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
            step: 0,
        }
    }
}

pub fn init_mlp(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    ensure!(
        layer_dims.len() >= 3,
        "need input, at least one hidden layer and output; got {layer_dims:?}"
    );
    ensure!(
        layer_dims.iter().all(|&d| d > 0),
        "layer sizes must be positive: {layer_dims:?}"
    );
    ensure!(
        *layer_dims.last().unwrap() == 1,
        "output layer must have one unit: {layer_dims:?}"
    );
    let mut rng = seeded_rng(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        weights.push(DenseMatrix::from_vec(fan_in, fan_out, data));
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        dropout_rates: vec![0.0; layer_dims.len() - 2],
    })
}

struct ForwardCache {
    /// Layer inputs: `inputs[0]` is the data, `inputs[l]` the (dropped-out)
    /// output of hidden layer `l`.
    inputs: Vec<DenseMatrix>,
    /// Dropout scale masks per hidden layer, if dropout was applied.
    masks: Vec<Option<DenseMatrix>>,
    logits: Vec<f64>,
}

impl MlpModel {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.dropout_rates
    }

    pub fn with_dropout(mut self, rates: &[f64]) -> Result<Self> {
        ensure!(
            rates.len() == self.layer_dims.len() - 2,
            "{} dropout rates for {} hidden layers",
            rates.len(),
            self.layer_dims.len() - 2
        );
        ensure!(
            rates.iter().all(|p| (0.0..1.0).contains(p)),
            "dropout rates must lie in [0, 1)"
        );
        self.dropout_rates = rates.to_vec();
        Ok(self)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Every parameter tensor, weights first, as flat slices.
    pub fn parameter_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(DenseMatrix::as_slice)
            .chain(self.biases.iter().map(Vec::as_slice))
            .collect()
    }

    pub(crate) fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(DenseMatrix::as_mut_slice)
            .chain(self.biases.iter_mut().map(Vec::as_mut_slice))
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parameter_slices().concat()
    }

    pub fn same_architecture(&self, other: &MlpModel) -> bool {
        self.layer_dims == other.layer_dims
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        ensure!(
            x.cols() == self.input_dim(),
            "model expects {} input features, got {}",
            self.input_dim(),
            x.cols()
        );
        Ok(())
    }

    fn forward_cache(&self, x: &DenseMatrix, mut dropout_rng: Option<&mut ChaCha8Rng>) -> ForwardCache {
        let hidden = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut masks = Vec::with_capacity(hidden);
        inputs.push(x.clone());
        for l in 0..hidden {
            let mut h = inputs[l].matmul(&self.weights[l]);
            for i in 0..h.rows() {
                for (v, b) in h.row_mut(i).iter_mut().zip(&self.biases[l]) {
                    *v = (*v + b).max(0.0);
                }
            }
            let rate = self.dropout_rates[l];
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let data = (0..h.rows() * h.cols())
                        .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
                        .collect();
                    let mask = DenseMatrix::from_vec(h.rows(), h.cols(), data);
                    for (v, m) in h.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *v *= m;
                    }
                    Some(mask)
                }
                _ => None,
            };
            masks.push(mask);
            inputs.push(h);
        }
        let out = inputs[hidden].matmul(&self.weights[hidden]);
        let b = self.biases[hidden][0];
        let logits = out.as_slice().iter().map(|z| z + b).collect();
        ForwardCache {
            inputs,
            masks,
            logits,
        }
    }

    /// Output logits in evaluation mode.
    pub fn logits(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cache(x, None).logits)
    }

    /// Mean binary cross-entropy in evaluation mode.
    pub fn loss(&self, data: Samples<'_>) -> Result<f64> {
        let logits = self.logits(data.x)?;
        Ok(mean_bce(&logits, data.y))
    }

    /// Mean loss and its gradient. Dropout is applied when `dropout_rng` is given.
    pub fn loss_and_gradient(
        &self,
        data: Samples<'_>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(data.x)?;
        ensure!(!data.is_empty(), "gradient of an empty batch");
        let cache = self.forward_cache(data.x, dropout_rng);
        let n = data.len() as f64;
        let loss = mean_bce(&cache.logits, data.y);

        let mut grads = Gradients::zeros_like(self);
        // dL/dz at the output
        let mut delta = DenseMatrix::from_vec(
            data.len(),
            1,
            cache
                .logits
                .iter()
                .zip(data.y)
                .map(|(&z, &y)| (sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)) - y) / n)
                .collect(),
        );
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = cache.inputs[l].t_matmul(&delta);
            for i in 0..delta.rows() {
                for (g, d) in grads.biases[l].iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            if l == 0 {
                break;
            }
            // back through layer l's weights into hidden layer l-1's output
            let mut upstream = delta.matmul(&self.weights[l].transpose());
            let act = &cache.inputs[l];
            if let Some(mask) = &cache.masks[l - 1] {
                for ((u, &a), &m) in upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(act.as_slice())
                    .zip(mask.as_slice())
                {
                    // a == 0 either from ReLU or from the mask; both block the gradient
                    *u = if a > 0.0 { *u * m } else { 0.0 };
                }
            } else {
                for (u, &a) in upstream.as_mut_slice().iter_mut().zip(act.as_slice()) {
                    if a <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            delta = upstream;
        }
        Ok((loss, grads))
    }

    fn apply_update(&mut self, grads: &Gradients, lr: f64, optimizer: Optimizer, adam: &mut AdamState) {
        match optimizer {
            Optimizer::Sgd => {
                for (p, g) in self.parameter_slices_mut().into_iter().zip(grads.slices()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            Optimizer::Adam => {
                adam.step += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(adam.step);
                let bc2 = 1.0 - ADAM_BETA2.powi(adam.step);
                let params = self.parameter_slices_mut();
                let moments = adam.first.slices_mut().zip(adam.second.slices_mut());
                for ((p, (m1, m2)), g) in params.into_iter().zip(moments).zip(grads.slices()) {
                    for i in 0..p.len() {
                        m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g[i];
                        m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = m1[i] / bc1;
                        let v_hat = m2[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce_with_logit(z: f64, y: f64) -> f64 {
    let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn mean_bce(logits: &[f64], y: &[f64]) -> f64 {
    logits.iter().zip(y).map(|(&z, &t)| bce_with_logit(z, t)).sum::<f64>() / y.len() as f64
}

/// Output probabilities. In `train_mode` inverted dropout is applied with the
/// model's rates, masks drawn from `seed`.
pub fn forward(model: &MlpModel, x: &DenseMatrix, train_mode: bool, seed: u64) -> Result<Vec<f64>> {
    model.check_input(x)?;
    let mut rng = seeded_rng(seed);
    let cache = model.forward_cache(x, train_mode.then_some(&mut rng));
    Ok(cache.logits.into_iter().map(sigmoid).collect())
}

/// Evaluation-mode scores in (0, 1).
pub fn predict(model: &MlpModel, x: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(model.logits(x)?.into_iter().map(sigmoid).collect())
}

/// One pass over `data` in shuffled minibatches. Rows inside a batch keep
/// their original order, so a batch covering all rows is order-canonical.
pub(crate) fn run_epoch(
    model: &mut MlpModel,
    adam: &mut AdamState,
    data: Samples<'_>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    for chunk in order.chunks_mut(config.minibatch_size) {
        chunk.sort_unstable();
        let bx = data.x.select_rows(chunk);
        let by: Vec<f64> = chunk.iter().map(|&i| data.y[i]).collect();
        let (_, grads) = model.loss_and_gradient(Samples { x: &bx, y: &by }, Some(rng))?;
        model.apply_update(&grads, config.learning_rate, config.optimizer, adam);
    }
    Ok(())
}

/// Minibatch training with early stopping on validation loss. Returns the
/// parameters from the epoch with the lowest validation loss (epoch 0 being
/// the starting point). Only a strictly lower loss counts as improvement.
pub fn train(
    model: &MlpModel,
    train_data: Samples<'_>,
    valid: Samples<'_>,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    ensure!(!train_data.is_empty(), "training set is empty");
    ensure!(!valid.is_empty(), "validation set is empty");
    let mut current = model.clone().with_dropout(&config.dropout_rates)?;
    let mut adam = AdamState::new(&current);
    let mut rng = seeded_rng(config.seed);

    let mut history = TrainHistory {
        train_loss: vec![current.loss(train_data)?],
        valid_loss: vec![current.loss(valid)?],
        stopped_epoch: 0,
        best_epoch: 0,
    };
    let mut best = current.clone();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        run_epoch(&mut current, &mut adam, train_data, config, &mut rng)?;
        let tl = current.loss(train_data)?;
        let vl = current.loss(valid)?;
        let params_finite = current.parameter_slices().iter().all(|t| t.iter().all(|v| v.is_finite()));
        if !params_finite || !tl.is_finite() || !vl.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: if tl.is_finite() { vl } else { tl },
            });
        }
        history.train_loss.push(tl);
        history.valid_loss.push(vl);
        history.stopped_epoch = epoch;
        if vl < history.valid_loss[history.best_epoch] {
            history.best_epoch = epoch;
            best = current.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

/// Writes a checkpoint: header, dims, dropout rates, then one section per
/// tensor with 17-significant-digit values.
pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

fn format_checkpoint(model: &MlpModel) -> String {
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.16e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    let dims: Vec<String> = model.layer_dims.iter().map(usize::to_string).collect();
    writeln!(out, "dims {}", dims.join(" ")).unwrap();
    writeln!(out, "dropout {}", join(&model.dropout_rates)).unwrap();
    for (l, w) in model.weights.iter().enumerate() {
        writeln!(out, "weights {l} {} {}", w.rows(), w.cols()).unwrap();
        for i in 0..w.rows() {
            writeln!(out, "{}", join(w.row(i))).unwrap();
        }
    }
    for (l, b) in model.biases.iter().enumerate() {
        writeln!(out, "biases {l} {}", b.len()).unwrap();
        writeln!(out, "{}", join(b)).unwrap();
    }
    out
}

fn parse_checkpoint(text: &str) -> std::result::Result<MlpModel, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| (0, format!("unexpected end of file, expected {what}")))
    };
    let floats = |lineno: usize, s: &str| -> std::result::Result<Vec<f64>, (usize, String)> {
        s.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| (lineno, format!("bad number {t:?}: {e}"))))
            .collect()
    };

    let (n, header) = next("header")?;
    if header != CHECKPOINT_HEADER {
        return Err((n, format!("expected {CHECKPOINT_HEADER:?}")));
    }
    let (n, dims_line) = next("dims")?;
    let layer_dims: Vec<usize> = dims_line
        .strip_prefix("dims ")
        .ok_or((n, "expected dims".to_string()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| (n, format!("bad dim {t:?}"))))
        .collect::<std::result::Result<_, _>>()?;
    let (n, drop_line) = next("dropout")?;
    let dropout_rates = floats(
        n,
        drop_line
            .strip_prefix("dropout")
            .ok_or((n, "expected dropout".to_string()))?,
    )?;
    let mut model = init_mlp(&layer_dims, 0).map_err(|e| (n, e.to_string()))?;
    model.dropout_rates = dropout_rates;
    for l in 0..model.weights.len() {
        let (n, _) = next("weights section")?;
        let (rows, cols) = model.weights[l].shape();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, row) = next("weight row")?;
            let row = floats(n, row)?;
            if row.len() != cols {
                return Err((n, format!("expected {cols} values, found {}", row.len())));
            }
            data.extend(row);
        }
        model.weights[l] = DenseMatrix::new(rows, cols, data).map_err(|e| (n, e.to_string()))?;
    }
    for l in 0..model.biases.len() {
        next("biases section")?;
        let (n, row) = next("bias values")?;
        let row = floats(n, row)?;
        if row.len() != model.biases[l].len() {
            return Err((n, "bias length mismatch".into()));
        }
        model.biases[l] = row;
    }
    Ok(model)
}
