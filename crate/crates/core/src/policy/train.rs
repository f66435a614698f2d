//! Adam training with periodic validation and best-checkpoint selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{AdamState, Checkpoint};
use super::loss::{compute_gradients, TrainExample};
use super::model::Policy;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Validation period in iterations; 0 disables periodic validation.
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            lr: 1e-3,
            batch_size: 16,
            iterations: 2000,
            seed: 0,
            eval_every: 500,
            grad_clip: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::InvalidParam("lr must be positive and batch_size nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidParam("Adam moments need beta in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Summary of one validation pass, as reported by the caller's evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub sr: f64,
    pub spl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    /// Mean batch loss since the previous entry.
    pub loss: f64,
    pub validation: Option<ValidationPoint>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation SR (final parameters when no
    /// validation ran). Earlier checkpoints win ties.
    pub best: Policy,
    pub best_iteration: usize,
    /// Final optimizer state, resumable with [`train_from`].
    pub last: Checkpoint,
    pub log: Vec<LogEntry>,
}

/// Batch indices for `iteration`, drawn with replacement from a per-iteration
/// stream so that a resumed run sees the same batches.
pub fn batch_indices(seed: u64, iteration: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &[rng::tag("batch"), iteration as u64]);
    (0..batch).map(|_| r.gen_range(0..n)).collect()
}

fn adam_update(policy: &mut Policy, adam: &mut AdamState, grads: &[super::tensor::Matrix], s: &TrainSchedule) {
    let scale = match s.grad_clip {
        Some(c) => {
            let norm = grads.iter().map(|g| g.squared_norm()).sum::<f64>().sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    adam.t += 1;
    let t = adam.t as i32;
    let bc1 = 1.0 - s.beta1.powi(t);
    let bc2 = 1.0 - s.beta2.powi(t);
    for ((p, g), (m, v)) in policy.params.tensors.iter_mut().zip(grads).zip(adam.m.iter_mut().zip(adam.v.iter_mut())) {
        for i in 0..p.data.len() {
            let gi = g.data[i] * scale;
            m.data[i] = s.beta1 * m.data[i] + (1.0 - s.beta1) * gi;
            v.data[i] = s.beta2 * v.data[i] + (1.0 - s.beta2) * gi * gi;
            let mh = m.data[i] / bc1;
            let vh = v.data[i] / bc2;
            p.data[i] -= s.lr * mh / (vh.sqrt() + s.eps);
        }
    }
}

/// Trains from freshly initialized parameters.
pub fn train(
    policy: Policy,
    data: &[TrainExample],
    schedule: &TrainSchedule,
    validate: &mut dyn FnMut(&Policy) -> Result<ValidationPoint>,
) -> Result<TrainOutcome> {
    let start = Checkpoint::fresh(policy);
    train_from(start, data, schedule, validate)
}

/// Continues training from `start` up to `schedule.iterations` total steps.
pub fn train_from(
    start: Checkpoint,
    data: &[TrainExample],
    schedule: &TrainSchedule,
    validate: &mut dyn FnMut(&Policy) -> Result<ValidationPoint>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParam("training set is empty".into()));
    }
    let mode = start.config.conditioning;
    let mut policy = start.policy()?;
    let mut adam = start.adam.clone().unwrap_or_else(|| AdamState::zeros(&policy.params));
    let first = adam.t as usize;
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Policy)> = None;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    for it in first..schedule.iterations {
        let idx = batch_indices(schedule.seed, it, schedule.batch_size, data.len());
        let batch: Vec<TrainExample> = idx.iter().map(|&i| data[i]).collect();
        let g = match compute_gradients(&policy, &batch, &mode) {
            Ok(g) => g,
            Err(Error::NonFinite { detail, .. }) => {
                return Err(Error::Diverged {
                    iteration: it,
                    detail,
                    last_good: Box::new(Checkpoint::new(&policy, Some(adam))),
                })
            }
            Err(e) => return Err(e),
        };
        let before = policy.params.clone();
        adam_update(&mut policy, &mut adam, &g.grads, schedule);
        if !policy.params.all_finite() {
            let mut good = policy.clone();
            good.params = before;
            return Err(Error::Diverged {
                iteration: it,
                detail: "parameters became non-finite after the update".into(),
                last_good: Box::new(Checkpoint::new(&good, None)),
            });
        }
        loss_sum += g.loss;
        loss_n += 1;

        let done = it + 1;
        let at_eval = schedule.eval_every > 0 && done % schedule.eval_every == 0;
        if at_eval || done == schedule.iterations {
            let v = if schedule.eval_every > 0 { Some(validate(&policy)?) } else { None };
            if let Some(v) = v {
                if best.as_ref().map_or(true, |(sr, _, _)| v.sr > *sr) {
                    best = Some((v.sr, done, policy.clone()));
                }
            }
            log.push(LogEntry { iteration: done, loss: loss_sum / loss_n as f64, validation: v });
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    let done = schedule.iterations.max(first);
    let last = Checkpoint::new(&policy, Some(adam));
    let (best_iteration, best) = match best {
        Some((_, i, p)) => (i, p),
        None => (done, policy),
    };
    Ok(TrainOutcome { best, best_iteration, last, log })
}
