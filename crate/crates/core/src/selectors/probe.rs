//! Virtual single-sample updates scored by a black-box validation metric.
//!
//! For each candidate the model is snapshotted, stepped once with plain SGD on
//! that candidate alone, re-evaluated, and restored. The metric does not need
//! to be differentiable.

use rayon::prelude::*;

use super::{pool_ids, ScoreVector, SelectionContext, Selector};
use crate::error::{Error, Result};
use crate::model::{restore, snapshot, train_step, ModelState, OptimizerState};
use crate::types::{ComponentParams, Sample};

/// Mean per-sample validation loss (lower is better).
pub fn val_loss(model: &ModelState, val: &[Sample]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let mut total = 0.0;
    for s in val {
        total += model.per_sample_loss(s)?;
    }
    Ok(total / val.len() as f64)
}

/// Fraction of validation targets whose arg-max prediction is wrong.
pub fn top1_error(model: &ModelState, val: &[Sample]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let (mut hits, mut total) = (0, 0);
    for s in val {
        let (h, t) = model.top1_hits(s)?;
        hits += h;
        total += t;
    }
    Ok(1.0 - hits as f64 / total as f64)
}

/// `metric(before) - metric(after)` for a single SGD step of size `probe_lr` on
/// each candidate. `metric` is lower-is-better. `model` and `opt` are not modified.
pub fn score_probe<F>(
    model: &ModelState,
    opt: &OptimizerState,
    pool: &[Sample],
    metric: F,
    probe_lr: f64,
) -> Result<ScoreVector>
where
    F: Fn(&ModelState) -> Result<f64> + Sync,
{
    let checked = |x: f64| {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NonFiniteMetric(x))
        }
    };
    let before = checked(metric(model)?)?;
    let ckpt = snapshot(model, opt);
    let scores = pool
        .par_iter()
        .map(|s| {
            let (mut probe, _) = restore(&ckpt)?;
            let mut sgd = OptimizerState::sgd(probe_lr);
            train_step(&mut probe, &mut sgd, &[s], &[1.0])?;
            Ok(before - checked(metric(&probe)?)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreVector::new(pool_ids(pool), scores, "nice")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMetric {
    ValLoss,
    Top1Error,
}

impl ProbeMetric {
    pub fn evaluate(&self, model: &ModelState, val: &[Sample]) -> Result<f64> {
        match self {
            ProbeMetric::ValLoss => val_loss(model, val),
            ProbeMetric::Top1Error => top1_error(model, val),
        }
    }
}

/// The `nice` selector.
#[derive(Debug)]
pub struct ProbeSelector {
    pub probe_lr: f64,
    pub metric: ProbeMetric,
}

impl ProbeSelector {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("nice", &["probe_lr", "metric"])?;
        let probe_lr = params.f64_or("probe_lr", 1e-2)?;
        if !(probe_lr.is_finite() && probe_lr >= 0.0) {
            return Err(Error::BadParams("probe_lr must be finite and >= 0".into()));
        }
        let metric = match params.str_or("metric", "val_loss")? {
            "val_loss" => ProbeMetric::ValLoss,
            "top1_error" => ProbeMetric::Top1Error,
            other => return Err(Error::BadParams(format!("unknown probe metric `{other}`"))),
        };
        Ok(Self { probe_lr, metric })
    }
}

impl Selector for ProbeSelector {
    fn name(&self) -> &str {
        "nice"
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        let metric = self.metric;
        let val = ctx.val;
        score_probe(
            ctx.model,
            ctx.opt,
            ctx.pool,
            |m| metric.evaluate(m, val),
            self.probe_lr,
        )
    }

    fn describe(&self) -> String {
        format!("nice(probe_lr={}, metric={:?})", self.probe_lr, self.metric)
    }
}
