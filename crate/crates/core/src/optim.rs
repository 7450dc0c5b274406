//! AdamW with decoupled weight decay, and the seeded mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::backward_into;
use crate::metrics::{roc_auc, ScoredSet};
use crate::model::{init_params_for, run, score_samples, Grads, ModelConfig, ParamSet, Sample, SelfiParams};
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
            batch_size: 64,
            epochs: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be > 0 and weight_decay >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        TrainConfig {
            optim: OptimConfig::default(),
            seed,
            model,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl OptimState {
    pub fn new(p: &SelfiParams) -> Self {
        OptimState {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }
}

/// One AdamW update, applied in place.
///
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)` with bias-corrected moments; the decay
/// term touches weights and biases alike.
pub fn adamw_step(p: &mut SelfiParams, g: &Grads, st: &mut OptimState, oc: &OptimConfig) -> Result<()> {
    st.t += 1;
    let t = st.t as i32;
    let bc1 = 1.0 - oc.beta1.powi(t);
    let bc2 = 1.0 - oc.beta2.powi(t);
    st.m.zip_mut(g, |_, m, g| {
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = oc.beta1 * *mi + (1.0 - oc.beta1) * gi;
        }
    })?;
    st.v.zip_mut(g, |_, v, g| {
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = oc.beta2 * *vi + (1.0 - oc.beta2) * gi * gi;
        }
    })?;
    let (m, v) = (&st.m, &st.v);
    let mut err = None;
    p.for_each_mut(|name, theta| {
        let (Some(m), Some(v)) = (m.tensor(name), v.tensor(name)) else {
            err = Some(Error::shape("adamw_step", name.as_str(), "missing moment"));
            return;
        };
        for ((w, mi), vi) in theta.iter_mut().zip(m.data).zip(v.data) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w -= oc.lr * (m_hat / (v_hat.sqrt() + oc.eps) + oc.weight_decay * *w);
        }
    });
    err.map_or(Ok(()), Err)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: SelfiParams,
    pub config: TrainConfig,
    pub best_val_auc: f64,
    /// 1-based; 0 means the untrained initialization.
    pub epoch_of_best: usize,
    pub history: Vec<EpochRecord>,
}

pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const SHUFFLE_STREAM: u64 = 2;

fn val_auc(p: &SelfiParams, val: &[Sample], cfg: &ModelConfig) -> Result<f64> {
    let scores = score_samples(p, val, cfg)?;
    roc_auc(&ScoredSet::new(scores, val.iter().map(|s| s.y).collect()))
}

/// Trains from a seeded initialization and keeps the parameters of the
/// epoch with the highest validation frame-level AUC (earliest on ties).
///
/// Parameters are validated and stored at `f32` precision, matching what a
/// checkpoint file holds, so a reloaded checkpoint scores identically.
pub fn train(train_set: &[Sample], val_set: &[Sample], tc: &TrainConfig) -> Result<Checkpoint> {
    let cfg = &tc.model;
    cfg.validate()?;
    tc.optim.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation set".into()));
    }
    let positives = val_set.iter().filter(|s| s.y == 1).count();
    if positives == 0 || positives == val_set.len() {
        return Err(Error::SingleClass("validation set has a single class".into()));
    }
    for s in train_set.iter().chain(val_set) {
        s.check(cfg.dims)?;
    }

    let mut params = init_params_for(cfg.mode, cfg.dims, derive_seed(tc.seed, INIT_STREAM));
    let mut state = OptimState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(tc.optim.epochs);

    let mut best_params = params.rounded_to_f32();
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    if tc.optim.epochs == 0 {
        best_auc = val_auc(&best_params, val_set, cfg)?;
    }

    for epoch in 1..=tc.optim.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for batch in order.chunks(tc.optim.batch_size) {
            let mut acc = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train_set[i];
                let trace = run(&params, s, cfg)?;
                backward_into(&trace, &params, s, cfg, &mut acc)?;
                batch_loss += trace.l_total;
                if (trace.score() >= 0.5) == (s.y == 1) {
                    correct += 1;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            acc.for_each_mut(|_, a| a.iter_mut().for_each(|x| *x *= inv));
            adamw_step(&mut params, &acc, &mut state, &tc.optim)?;
            loss_sum += batch_loss * inv;
            batches += 1;
        }

        let snapshot = params.rounded_to_f32();
        let auc = val_auc(&snapshot, val_set, cfg)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_auc: auc,
        });
        if auc > best_auc {
            best_auc = auc;
            best_epoch = epoch;
            best_params = snapshot;
        }
    }

    Ok(Checkpoint {
        params: best_params,
        config: *tc,
        best_val_auc: best_auc,
        epoch_of_best: best_epoch,
        history,
    })
}
