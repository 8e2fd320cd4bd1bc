//! Initialization, Adam, the minibatch loop and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::PathInstance;
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::exec::Execution;
use crate::model::{forward_on_tape, loss, loss_on_tape, predict_instances, ModelConfig, ModelParams, PreparedGraph};
use crate::numerics::{ComputeGraph, Gradients, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    #[default]
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate once per epoch.
    pub decay_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_window: usize,
    pub early_stop_metric: EarlyStopMetric,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Times each positive training instance appears per epoch; 1 disables.
    pub oversample_positive: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            decay_rate: 0.9,
            batch_size: 32,
            max_epochs: 50,
            early_stop_window: 3,
            early_stop_metric: EarlyStopMetric::Loss,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            oversample_positive: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("decay_rate", self.decay_rate),
            ("epsilon", self.epsilon),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig(format!("`{name}` must be positive")));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("`{name}` must lie in [0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("`batch_size` must be positive".into()));
        }
        if self.early_stop_window == 0 {
            return Err(Error::InvalidConfig("`early_stop_window` must be at least 1".into()));
        }
        if self.oversample_positive == 0 {
            return Err(Error::InvalidConfig("`oversample_positive` must be at least 1".into()));
        }
        Ok(())
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in params.values.ids().collect::<Vec<_>>() {
        let fan_in = params.values.fan_in(id);
        if fan_in == 0 {
            continue;
        }
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for v in params.values.get_mut(id).data_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct AdamMoments {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub steps: u64,
}

impl AdamMoments {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| t.map(|_| 0.0)).collect();
        AdamMoments { first: zeros.clone(), second: zeros, steps: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub moments: AdamMoments,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub best_params: ParamSet,
    pub best_epoch: usize,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let moments = AdamMoments::new(&params.values);
        let best_params = params.values.clone();
        TrainState { params, moments, epoch: 0, best_val_loss: f64::INFINITY, best_params, best_epoch: 0 }
    }
}

pub fn effective_learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    config.learning_rate * config.decay_rate.powi(epoch as i32)
}

/// One bias-corrected Adam update at the learning rate for `epoch`
/// (0-based). Nothing is modified when a gradient is rejected.
pub fn adam_step(state: &mut TrainState, gradients: &Gradients, config: &TrainConfig, epoch: usize) -> Result<()> {
    let values = &mut state.params.values;
    if gradients.0.len() != values.len() {
        return Err(Error::shape("adam_step", format!("{} gradients for {} parameters", gradients.0.len(), values.len())));
    }
    for (id, g) in values.ids().zip(&gradients.0) {
        if !g.same_shape(values.get(id)) {
            return Err(Error::shape(
                "adam_step",
                format!("gradient of `{}` has shape {:?}, expected {:?}", values.name(id), g.shape(), values.get(id).shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(values.name(id).to_owned()));
        }
    }
    let m = &mut state.moments;
    m.steps += 1;
    let lr = effective_learning_rate(config, epoch);
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(m.steps as i32);
    let c2 = 1.0 - b2.powi(m.steps as i32);
    for (k, theta) in values.tensors_mut().iter_mut().enumerate() {
        let g = gradients.0[k].data();
        let first = m.first[k].data_mut();
        let second = m.second[k].data_mut();
        for (i, w) in theta.data_mut().iter_mut().enumerate() {
            first[i] = b1 * first[i] + (1.0 - b1) * g[i];
            second[i] = b2 * second[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = first[i] / c1;
            let v_hat = second[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Minibatches for one epoch as indices into `instances`.
///
/// Prediction times are shuffled, then the instances of each time (also
/// shuffled) are laid end to end and cut into `batch_size` chunks, so a batch
/// touches only one or two windows. The result depends only on
/// `(instances, seed, epoch)`.
pub fn epoch_batches(
    instances: &[PathInstance],
    batch_size: usize,
    oversample_positive: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut by_time: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, inst) in instances.iter().enumerate() {
        let copies = if inst.label == 1 { oversample_positive.max(1) } else { 1 };
        by_time.entry(inst.t).or_default().extend(std::iter::repeat_n(i, copies));
    }
    let mut groups: Vec<Vec<usize>> = by_time.into_values().collect();
    groups.shuffle(&mut rng);
    let mut order = Vec::new();
    for mut group in groups {
        group.shuffle(&mut rng);
        order.extend(group);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Inputs shared by every batch: prepared snapshots and the path table.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub prepared: &'a PreparedGraph,
    pub paths: &'a [Vec<usize>],
}

/// Splits `indices` into runs that share a prediction time.
fn time_runs(instances: &[PathInstance], indices: &[usize]) -> Vec<Vec<usize>> {
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for &i in indices {
        match runs.last_mut() {
            Some(run) if instances[run[0]].t == instances[i].t => run.push(i),
            _ => runs.push(vec![i]),
        }
    }
    runs
}

/// Summed loss and its gradient over one window's instances.
pub fn window_loss_and_gradient(
    params: &ModelParams,
    config: &ModelConfig,
    data: TrainingData<'_>,
    t: usize,
    instances: &[&PathInstance],
) -> Result<(f64, Gradients)> {
    let window = data.prepared.window(t, config.window)?;
    let paths = instances
        .iter()
        .map(|inst| path_of(data.paths, inst.path_id))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = instances.iter().map(|inst| inst.label).collect();
    let mut g = ComputeGraph::new(&params.values);
    let outputs = forward_on_tape(&mut g, &params.layout, config, &window, &paths)?;
    let root = loss_on_tape(&mut g, &outputs, &labels)?;
    let value = g.value(root).data()[0];
    Ok((value, g.gradient(root)?))
}

pub(crate) fn path_of(paths: &[Vec<usize>], id: usize) -> Result<&[usize]> {
    paths
        .get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown path id {id}")))
}

/// Summed loss and gradient over a minibatch; windows are processed in
/// parallel and reduced in batch order.
pub fn batch_loss_and_gradient(
    params: &ModelParams,
    config: &ModelConfig,
    data: TrainingData<'_>,
    instances: &[PathInstance],
    batch: &[usize],
    exec: Execution,
) -> Result<(f64, Gradients)> {
    let runs = time_runs(instances, batch);
    let parts = exec.map(&runs, |run| {
        let members: Vec<&PathInstance> = run.iter().map(|&i| &instances[i]).collect();
        window_loss_and_gradient(params, config, data, members[0].t, &members)
    });
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(&params.values);
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.accumulate(&g);
    }
    Ok((total, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-instance loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_macro_f1\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_macro_f1));
    }
    out
}

/// Tracks the best validation loss and how long it has gone unimproved.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    window: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(window: usize) -> Self {
        EarlyStopper { window, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Records `loss` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.window
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// `params` hold the best-validation snapshot.
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
}

/// Validation loss (per instance) and Macro-F1 for `params`.
pub fn evaluate_split(
    params: &ModelParams,
    config: &ModelConfig,
    data: TrainingData<'_>,
    instances: &[PathInstance],
    exec: Execution,
) -> Result<(f64, f64)> {
    let preds = predict_instances(params, config, data.prepared, data.paths, instances, exec)?;
    let labels: Vec<usize> = instances.iter().map(|i| i.label).collect();
    let total = loss(&preds, &labels)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.classify(config.decision_threshold)).collect();
    let report = compute_metrics(&predicted, &labels)?;
    Ok((total / instances.len() as f64, report.macro_f1))
}

pub fn fit(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: TrainingData<'_>,
    train: &[PathInstance],
    validation: &[PathInstance],
    exec: Execution,
) -> Result<FitResult> {
    let params = init_params(model_config, train_config.seed)?;
    fit_from(TrainState::new(params), model_config, train_config, data, train, validation, exec)
}

pub fn fit_from(
    mut state: TrainState,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: TrainingData<'_>,
    train: &[PathInstance],
    validation: &[PathInstance],
    exec: Execution,
) -> Result<FitResult> {
    model_config.validate()?;
    train_config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let mut history = Vec::new();
    let mut stopper = EarlyStopper::new(train_config.early_stop_window);
    for epoch in 0..train_config.max_epochs {
        let batches = epoch_batches(
            train,
            train_config.batch_size,
            train_config.oversample_positive,
            train_config.seed,
            epoch,
        );
        let (mut total, mut count) = (0.0, 0usize);
        for batch in &batches {
            let (l, grads) = batch_loss_and_gradient(&state.params, model_config, data, train, batch, exec)?;
            adam_step(&mut state, &grads, train_config, epoch)?;
            total += l;
            count += batch.len();
        }
        let (val_loss, val_macro_f1) = evaluate_split(&state.params, model_config, data, validation, exec)?;
        state.epoch = epoch + 1;
        history.push(EpochRecord { epoch: epoch + 1, train_loss: total / count as f64, val_loss, val_macro_f1 });
        if stopper.observe(epoch + 1, val_loss) {
            state.best_val_loss = val_loss;
            state.best_epoch = epoch + 1;
            state.best_params = state.params.values.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    state.params.values = state.best_params.clone();
    Ok(FitResult { state, history })
}
