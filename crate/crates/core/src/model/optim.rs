use serde::{Deserialize, Serialize};

use super::{GradientVector, ModelState};
use crate::error::{Error, Result};
use crate::types::{OptimConfig, OptimizerKind, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// SGD or Adam (no weight decay). `m` and `v` are empty for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: OptimHyper,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            hyper: OptimHyper {
                lr,
                beta1: 0.0,
                beta2: 0.0,
                eps: 0.0,
            },
        }
    }

    pub fn adam(num_params: usize, hyper: OptimHyper) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            hyper,
        }
    }

    pub fn from_config(cfg: &OptimConfig, num_params: usize) -> Self {
        match cfg.kind {
            OptimizerKind::Sgd => Self::sgd(cfg.learning_rate),
            OptimizerKind::Adam => Self::adam(
                num_params,
                OptimHyper {
                    lr: cfg.learning_rate,
                    beta1: cfg.beta1,
                    beta2: cfg.beta2,
                    eps: cfg.eps,
                },
            ),
        }
    }

    /// Applies one update with gradient `g`.
    fn apply(&mut self, params: &mut [f64], g: &[f64]) {
        let h = self.hyper;
        match self.kind {
            OptimizerKind::Sgd => {
                self.t += 1;
                for (p, &gi) in params.iter_mut().zip(g) {
                    *p -= h.lr * gi;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - h.beta1.powi(self.t as i32);
                let bc2 = 1.0 - h.beta2.powi(self.t as i32);
                for (((p, m), v), &gi) in params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(g)
                {
                    *m = h.beta1 * *m + (1.0 - h.beta1) * gi;
                    *v = h.beta2 * *v + (1.0 - h.beta2) * gi * gi;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `Σ wᵢ·lossᵢ / |batch|`, evaluated before the update.
    pub weighted_mean_loss: f64,
    /// Unweighted pre-update loss of every batch member, in batch order.
    pub per_sample_losses: Vec<f64>,
}

/// One optimizer step on `(Σ wᵢ·lossᵢ) / |batch|`.
///
/// Gradients are accumulated in batch order so identical inputs give
/// bitwise-identical updates. On error neither `model` nor `opt` is touched.
pub fn train_step(
    model: &mut ModelState,
    opt: &mut OptimizerState,
    batch: &[&Sample],
    weights: &[f64],
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if weights.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: weights.len(),
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
        return Err(Error::NegativeWeight { index, value });
    }
    if opt.kind == OptimizerKind::Adam && opt.m.len() != model.num_params() {
        return Err(Error::LengthMismatch {
            expected: model.num_params(),
            got: opt.m.len(),
        });
    }
    let mut grad = vec![0.0; model.num_params()];
    let mut losses = Vec::with_capacity(batch.len());
    for (s, &w) in batch.iter().zip(weights) {
        losses.push(model.accumulate_gradient(s, w, &mut grad)?);
    }
    let n = batch.len() as f64;
    for g in grad.iter_mut() {
        *g /= n;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("batch gradient".into()));
    }
    let weighted: f64 = losses.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / n;
    opt.apply(&mut model.params, &grad);
    Ok(StepOutcome {
        weighted_mean_loss: weighted,
        per_sample_losses: losses,
    })
}

/// Adam direction a fresh step with gradient `g` would take, bias-corrected as
/// step `t + 1`: `m̂ / (√v̂ + eps)`.
pub fn adam_precondition(g: &GradientVector, opt: &OptimizerState) -> Result<GradientVector> {
    if opt.kind != OptimizerKind::Adam {
        return Err(Error::NotAdam);
    }
    if opt.t == 0 {
        return Err(Error::ColdOptimizer);
    }
    if g.len() != opt.m.len() {
        return Err(Error::LengthMismatch {
            expected: opt.m.len(),
            got: g.len(),
        });
    }
    let h = opt.hyper;
    let step = (opt.t + 1) as i32;
    let bc1 = 1.0 - h.beta1.powi(step);
    let bc2 = 1.0 - h.beta2.powi(step);
    let out =
        g.0.iter()
            .zip(opt.m.iter().zip(&opt.v))
            .map(|(&gi, (&m, &v))| {
                let m_hat = (h.beta1 * m + (1.0 - h.beta1) * gi) / bc1;
                let v_hat = (h.beta2 * v + (1.0 - h.beta2) * gi * gi) / bc2;
                m_hat / (v_hat.sqrt() + h.eps)
            })
            .collect();
    Ok(GradientVector(out))
}
