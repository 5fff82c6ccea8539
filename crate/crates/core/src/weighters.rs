//! Per-sample loss reweighting.
//!
//! Weights always average to one over the batch, so reweighting never changes
//! the effective learning rate.

use crate::error::{Error, Result};
use crate::model::{train_step, ModelState, OptimizerState, StepOutcome};
use crate::types::{ComponentParams, Sample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightStrategy {
    Uniform,
    /// `wᵢ = ℓᵢ / mean(ℓ)`.
    Linear,
    /// `wᵢ = B · softmax(ℓ / τ)ᵢ`.
    Softmax {
        temperature: f64,
    },
}

impl WeightStrategy {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("loss", &["strategy", "temperature"])?;
        let strategy = params.str_or("strategy", "softmax")?;
        match strategy {
            "uniform" => Ok(WeightStrategy::Uniform),
            "linear" => Ok(WeightStrategy::Linear),
            "softmax" => {
                let temperature = params.f64_or("temperature", 1.0)?;
                if !(temperature > 0.0) {
                    return Err(Error::BadParams(format!(
                        "temperature must be > 0, got {temperature}"
                    )));
                }
                Ok(WeightStrategy::Softmax { temperature })
            }
            other => Err(Error::BadParams(format!(
                "unknown weighting strategy `{other}`"
            ))),
        }
    }
}

pub fn compute_weights(losses: &[f64], strat: WeightStrategy) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for (index, &value) in losses.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss at index {index}")));
        }
        if value < 0.0 {
            return Err(Error::NegativeLoss { index, value });
        }
    }
    let b = losses.len() as f64;
    let weights = match strat {
        WeightStrategy::Uniform => vec![1.0; losses.len()],
        WeightStrategy::Linear => {
            let mean = losses.iter().sum::<f64>() / b;
            if mean == 0.0 {
                vec![1.0; losses.len()]
            } else {
                losses.iter().map(|l| l / mean).collect()
            }
        }
        WeightStrategy::Softmax { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::BadParams(format!(
                    "temperature must be > 0, got {temperature}"
                )));
            }
            let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = losses
                .iter()
                .map(|l| ((l - max) / temperature).exp())
                .collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| b * e / z).collect()
        }
    };
    Ok(weights)
}

/// One weighted training step. During warmup every weight is one; afterwards
/// weights come from the pre-step losses.
pub fn apply(
    model: &mut ModelState,
    opt: &mut OptimizerState,
    batch: &[&Sample],
    strat: WeightStrategy,
    in_warmup: bool,
) -> Result<(StepOutcome, Vec<f64>)> {
    let weights = if in_warmup {
        vec![1.0; batch.len()]
    } else {
        let losses = batch
            .iter()
            .map(|s| model.per_sample_loss(s))
            .collect::<Result<Vec<_>>>()?;
        compute_weights(&losses, strat)?
    };
    let out = train_step(model, opt, batch, &weights)?;
    Ok((out, weights))
}

/// `(min, max, entropy)` of the normalized weights, for step logging.
pub fn weight_summary(weights: &[f64]) -> (f64, f64, f64) {
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = weights.iter().sum();
    let entropy = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum();
    (min, max, entropy)
}

/// The weighter component resolved from the registry.
pub trait Weighter: Send {
    fn name(&self) -> &str;
    fn weights(&self, losses: &[f64]) -> Result<Vec<f64>>;
    fn strategy(&self) -> WeightStrategy;
}

#[derive(Debug)]
pub struct LossWeighter {
    pub strategy: WeightStrategy,
}

impl LossWeighter {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        Ok(Self {
            strategy: WeightStrategy::from_params(params)?,
        })
    }
}

impl Weighter for LossWeighter {
    fn name(&self) -> &str {
        "loss"
    }

    fn weights(&self, losses: &[f64]) -> Result<Vec<f64>> {
        compute_weights(losses, self.strategy)
    }

    fn strategy(&self) -> WeightStrategy {
        self.strategy
    }
}
