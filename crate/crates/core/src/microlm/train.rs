//! Adam training loop on the copy task.

use serde::{Deserialize, Serialize};

use super::backward::backward_into;
use super::forward::forward_lm;
use super::model::{ModelGrads, ModelParams};
use super::task::{CopyTask, TaskStream};
use super::tensor::Scalar;
use crate::{Error, Result};

/// Salt separating the data stream from the weight initialization.
const DATA_SEED_SALT: u64 = 0x4441_5441_5f53_5452;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Linear warm-up length in steps.
    pub warmup_steps: usize,
    /// Cosine decay floor as a fraction of `lr`; 1 keeps the rate constant.
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Number of trailing steps averaged into the reported final loss.
    pub final_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 16,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 100,
            min_lr_ratio: 0.1,
            grad_clip: Some(1.0),
            final_window: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("min_lr_ratio must lie in [0, 1]");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if self.final_window == 0 {
            return bad("final_window must be positive");
        }
        Ok(())
    }

    /// Learning rate used at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }
}

fn flatten_grads<T: Scalar>(grads: &ModelGrads<T>, out: &mut Vec<f64>) {
    out.clear();
    grads.visit_tensors(|_, t| out.extend(t.iter().map(|v| v.f64())));
    for g in &grads.fire {
        g.visit(|t| out.extend_from_slice(t));
    }
}

/// Adam moments over the flattened parameter vector (dense tensors first,
/// then FIRE states in order).
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
    flat: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            flat: Vec::new(),
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    /// Parameters are left untouched when the norm is not finite.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &ModelGrads<T>,
        lr: f64,
        clip: Option<f64>,
    ) -> f64 {
        flatten_grads(grads, &mut self.flat);
        if self.m.is_empty() {
            self.m = vec![0.0; self.flat.len()];
            self.v = vec![0.0; self.flat.len()];
        }
        assert_eq!(self.m.len(), self.flat.len(), "parameter layout changed");
        let norm = self.flat.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return norm;
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((g, m), v) in self.flat.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g_s = *g * scale;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g_s;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g_s * g_s;
            *g = lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
        let mut k = 0;
        let flat = &self.flat;
        params.visit_tensors_mut(|_, t| {
            for p in t.iter_mut() {
                *p -= T::of(flat[k]);
                k += 1;
            }
        });
        for s in params.fire_states_mut() {
            s.visit_trainable_mut(|t| {
                for p in t.iter_mut() {
                    *p -= flat[k];
                    k += 1;
                }
            });
        }
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<LossPoint>,
    /// Mean batch loss over the trailing window (NaN when no step ran).
    pub final_loss: f64,
    pub final_accuracy: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,accuracy\n");
        for p in &self.loss_curve {
            s.push_str(&format!("{},{},{}\n", p.step, p.loss, p.accuracy));
        }
        s
    }
}

/// Trains `params` in place. The data stream is derived from `seed`.
pub fn train<T: Scalar>(
    params: &mut ModelParams<T>,
    task: &CopyTask,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    params.validate()?;
    task.validate()?;
    if task.vocab > params.config.vocab_size {
        return Err(Error::InvalidParameter(format!(
            "task vocabulary {} exceeds model vocabulary {}",
            task.vocab, params.config.vocab_size
        )));
    }
    let mut stream = TaskStream::new(*task, seed ^ DATA_SEED_SALT)?;
    let mut adam = Adam::new(cfg);
    let mut grads = params.zero_grads();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = stream.next_batch(cfg.batch_size);
        let out = forward_lm(params, &batch)?;
        let stats = backward_into(params, &out, &mut grads)?;
        if !stats.loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss: stats.loss });
        }
        let norm = adam.step(params, &grads, cfg.lr_at(step), cfg.grad_clip);
        if !norm.is_finite() {
            return Err(Error::TrainingDiverged { step, loss: stats.loss });
        }
        curve.push(LossPoint {
            step,
            loss: stats.loss,
            accuracy: stats.accuracy(),
        });
    }
    let tail = &curve[curve.len().saturating_sub(cfg.final_window)..];
    let mean = |f: fn(&LossPoint) -> f64| {
        if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(f).sum::<f64>() / tail.len() as f64
        }
    };
    Ok(TrainReport {
        final_loss: mean(|p| p.loss),
        final_accuracy: mean(|p| p.accuracy),
        loss_curve: curve,
    })
}
