//! Training of the H2MGNN estimator, weakly supervised through the
//! measurement function or supervised on true states, plus evaluation.

mod loss;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::h2mgnn::{forward, Batch, Features, Mode, Model, ParamVars};
use crate::pf_equations::{Measurement, StateVector};
use crate::scenario::{stream_rng, Dataset, Sample, Split};

pub use loss::{supervised_loss, weak_loss, LossConfig, Physics, WeakLoss};
pub use metrics::{compute_metrics, voltage_rmse, Estimate, Metrics};

const STREAM_SHUFFLE: u64 = 0x7368_7566;
const STREAM_DROPOUT: u64 = 0x6472_6f70;
/// Samples per forward pass outside of training steps.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Fit the measurements through the measurement function; labels unused.
    Weak,
    /// Fit the true states.
    Supervised,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(TrainMode::Weak),
            "supervised" => Ok(TrainMode::Supervised),
            _ => Err(Error::Config(format!("unknown training mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Floor on the σ of virtual measurements in the weak training and
    /// validation losses. 0 keeps the measured σ.
    pub virtual_sigma_floor: f64,
}

impl TrainConfig {
    /// Hyperparameters tuned for the 14-bus network. Supervised training
    /// drops the l2 term, which would dominate its much smaller loss.
    pub fn case14(mode: TrainMode, seed: u64) -> Self {
        TrainConfig {
            epochs: 630,
            batch_size: 64,
            learning_rate: 0.006,
            l2: if mode == TrainMode::Weak { 0.002 } else { 0.0 },
            seed,
            mode,
            virtual_sigma_floor: 1e-3,
        }
    }

    /// The 14-bus profile with the epoch count cut to `epochs`.
    pub fn case14_fast(mode: TrainMode, seed: u64, epochs: usize) -> Self {
        TrainConfig { epochs, ..Self::case14(mode, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("epochs, batch size and learning rate must be positive".into()));
        }
        if !(self.virtual_sigma_floor >= 0.0) {
            return Err(Error::Config("virtual sigma floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Adam with the usual defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (j, (x, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let m = &mut self.m[k][j];
                let v = &mut self.v[k][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gj;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gj * gj;
                *x -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss, without the l2 term.
    pub train_loss: f64,
    /// Mean per-sample validation loss of the training objective.
    pub val_loss: f64,
    pub val_v_rmse: f64,
    pub val_loading_rmse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_v_rmse,val_loading_rmse\n");
        for r in &self.history {
            out += &format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_v_rmse, r.val_loading_rmse);
        }
        out
    }
}

fn encode_all(model: &Model, network: &GridNetwork, samples: &[&Sample]) -> Result<Vec<Features>> {
    samples.iter().map(|s| model.normalizer.encode(network, &s.z)).collect()
}

fn collect_grads(tape: &Tape, params: &ParamVars<'_>, loss: crate::autodiff::Var<'_>) -> Result<Vec<Tensor>> {
    let grads = tape.backward(loss).map_err(|e| Error::Config(e.to_string()))?;
    Ok(params.vars.iter().map(|v| grads.get_or_zero(v)).collect())
}

/// Mean validation loss of the training objective, in eval mode.
fn validation_loss(
    model: &Model,
    network: &GridNetwork,
    samples: &[&Sample],
    features: &[Features],
    tc: &TrainConfig,
    lc: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (chunk, feats) in samples.chunks(EVAL_CHUNK).zip(features.chunks(EVAL_CHUNK)) {
        let tape = Tape::new();
        let pv = ParamVars::frozen(&tape, &model.params);
        let batch = Batch::new(network, feats);
        let out = forward(&tape, &model.config, &pv, &batch, Mode::Eval, None);
        total += match tc.mode {
            TrainMode::Weak => {
                let sets: Vec<&[Measurement]> = chunk.iter().map(|s| s.z.as_slice()).collect();
                let mut ph = Physics::new(network, &batch, &sets)?;
                ph.set_virtual_sigma_floor(tc.virtual_sigma_floor);
                weak_loss(&tape, &out, &ph, lc).total.item()
            }
            TrainMode::Supervised => {
                let truth: Vec<&StateVector> = chunk.iter().map(|s| &s.truth).collect();
                supervised_loss(&tape, &out, &batch, &truth).item() * chunk.len() as f64
            }
        };
    }
    Ok(total / samples.len() as f64)
}

/// Eval-mode estimates for pre-encoded samples.
pub fn predict_encoded(model: &Model, network: &GridNetwork, features: &[Features]) -> Vec<StateVector> {
    let mut out = Vec::with_capacity(features.len());
    for feats in features.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let pv = ParamVars::frozen(&tape, &model.params);
        let batch = Batch::new(network, feats);
        out.extend(forward(&tape, &model.config, &pv, &batch, Mode::Eval, None).states(&batch));
    }
    out
}

/// Trains `model` on the train split of `dataset`, keeping the weights of
/// the epoch with the lowest validation loss.
///
/// In weak mode the loss, the parameter updates and the checkpoint choice
/// depend only on measurements; the true states are read solely to log
/// validation RMSEs.
pub fn train(network: &GridNetwork, dataset: &Dataset, model: Model, tc: &TrainConfig, lc: &LossConfig) -> Result<TrainOutcome> {
    train_with_progress(network, dataset, model, tc, lc, &mut |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    network: &GridNetwork,
    dataset: &Dataset,
    mut model: Model,
    tc: &TrainConfig,
    lc: &LossConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tc.validate()?;
    lc.validate()?;
    let train_set = dataset.subset(Split::Train);
    let val_set = dataset.subset(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    let train_feats = encode_all(&model, network, &train_set)?;
    let val_feats = encode_all(&model, network, &val_set)?;
    let val_truth: Vec<&StateVector> = val_set.iter().map(|s| &s.truth).collect();

    let mut adam = Adam::new(tc.learning_rate);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=tc.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(tc.seed, STREAM_SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(tc.batch_size).enumerate() {
            let tape = Tape::new();
            let pv = ParamVars::trainable(&tape, &model.params);
            let batch = Batch::new(network, idx.iter().map(|&k| &train_feats[k]));
            let mut rng = stream_rng(tc.seed, STREAM_DROPOUT, ((epoch as u64) << 32) | bi as u64);
            let out = forward(&tape, &model.config, &pv, &batch, Mode::Train, Some(&mut rng));
            let b = idx.len() as f64;
            let loss = match tc.mode {
                TrainMode::Weak => {
                    let sets: Vec<&[Measurement]> = idx.iter().map(|&k| train_set[k].z.as_slice()).collect();
                    let mut ph = Physics::new(network, &batch, &sets)?;
                    ph.set_virtual_sigma_floor(tc.virtual_sigma_floor);
                    let wl = weak_loss(&tape, &out, &ph, lc);
                    if let Some(term) = wl.non_finite_term() {
                        return Err(Error::NonFiniteLoss { batch: bi, term: term.into() });
                    }
                    wl.total.scale(1.0 / b)
                }
                TrainMode::Supervised => {
                    let truth: Vec<&StateVector> = idx.iter().map(|&k| &train_set[k].truth).collect();
                    let l = supervised_loss(&tape, &out, &batch, &truth);
                    if !l.item().is_finite() {
                        return Err(Error::NonFiniteLoss { batch: bi, term: "mse".into() });
                    }
                    l
                }
            };
            loss_sum += loss.item() * b;
            let mut grads = collect_grads(&tape, &pv, loss)?;
            drop(tape);
            for (g, p) in grads.iter_mut().zip(model.params.tensors()) {
                for (gj, pj) in g.data_mut().iter_mut().zip(p.data()) {
                    *gj += 2.0 * tc.l2 * pj;
                }
            }
            adam.step(&mut model.params.tensors_mut(), &grads);
        }

        let val_loss = validation_loss(&model, network, &val_set, &val_feats, tc, lc)?;
        let est = predict_encoded(&model, network, &val_feats);
        let estimates: Vec<Estimate> = est
            .into_iter()
            .map(|s| Estimate { state: Some(s), converged: true, time: Default::default() })
            .collect();
        let m = compute_metrics(network, &val_truth, &estimates);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_v_rmse: m.voltage_rmse,
            val_loading_rmse: m.loading_rmse_all,
            seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(history.last().expect("just pushed"));
        if val_loss.is_finite() && best.as_ref().map_or(true, |(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.unwrap_or((f64::NAN, tc.epochs, model));
    Ok(TrainOutcome { model, best_epoch, history })
}

/// Eval-mode estimates of `samples`, each run on its own and timed from
/// measurement set to state, including feature encoding.
pub fn estimate_each(model: &Model, network: &GridNetwork, samples: &[&Sample]) -> Result<Vec<Estimate>> {
    let mut estimates = Vec::with_capacity(samples.len());
    for s in samples {
        let start = Instant::now();
        let state = model.predict(network, &s.z)?;
        let time = start.elapsed();
        let converged = state.v().iter().chain(state.theta()).all(|x| x.is_finite());
        estimates.push(Estimate { state: Some(state), converged, time });
    }
    Ok(estimates)
}

/// Metrics of a model on `samples`, see [`estimate_each`].
pub fn evaluate(model: &Model, network: &GridNetwork, samples: &[&Sample]) -> Result<Metrics> {
    let estimates = estimate_each(model, network, samples)?;
    let truth: Vec<&StateVector> = samples.iter().map(|s| &s.truth).collect();
    Ok(compute_metrics(network, &truth, &estimates))
}
