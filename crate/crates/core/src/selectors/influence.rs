//! Gradient-similarity influence scores.
//!
//! A candidate's score is the cosine between its (optionally Adam-preconditioned)
//! training gradient and the validation gradient, both passed through a seeded
//! random sign projection.

use rayon::prelude::*;

use super::projection::Projection;
use super::{pool_ids, ScoreVector, SelectionContext, Selector};
use crate::error::{Error, Result};
use crate::model::{adam_precondition, GradientVector, ModelState, OptimizerState};
use crate::types::{ComponentParams, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioning {
    None,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Cosine against the mean validation gradient.
    MeanGradient,
    /// Largest cosine against any single validation gradient.
    MaxCosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceParams {
    pub projection_dim: usize,
    pub projection_seed: u64,
    /// Skip the random projection and compare full gradients.
    pub identity_projection: bool,
    pub preconditioning: Preconditioning,
    pub aggregation: Aggregation,
}

impl Default for InfluenceParams {
    fn default() -> Self {
        Self {
            projection_dim: 512,
            projection_seed: 0,
            identity_projection: false,
            preconditioning: Preconditioning::Adam,
            aggregation: Aggregation::MeanGradient,
        }
    }
}

impl InfluenceParams {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown(
            "less",
            &[
                "projection_dim",
                "projection_seed",
                "projection",
                "preconditioning",
                "aggregation",
            ],
        )?;
        let d = Self::default();
        let projection_dim = params.usize_or("projection_dim", d.projection_dim)?;
        if projection_dim == 0 {
            return Err(Error::BadParams("projection_dim must be >= 1".into()));
        }
        let identity_projection = match params.str_or("projection", "rademacher")? {
            "rademacher" => false,
            "identity" => true,
            other => return Err(Error::BadParams(format!("unknown projection `{other}`"))),
        };
        let preconditioning = match params.str_or("preconditioning", "adam")? {
            "adam" => Preconditioning::Adam,
            "none" => Preconditioning::None,
            other => {
                return Err(Error::BadParams(format!(
                    "unknown preconditioning `{other}`"
                )))
            }
        };
        let aggregation = match params.str_or("aggregation", "mean_gradient")? {
            "mean_gradient" => Aggregation::MeanGradient,
            "max_cosine" => Aggregation::MaxCosine,
            other => return Err(Error::BadParams(format!("unknown aggregation `{other}`"))),
        };
        Ok(Self {
            projection_dim,
            projection_seed: params.usize_or("projection_seed", 0)? as u64,
            identity_projection,
            preconditioning,
            aggregation,
        })
    }

    fn projection(&self, input_dim: usize) -> Projection {
        if self.identity_projection {
            Projection::Identity
        } else {
            Projection::rademacher(input_dim, self.projection_dim, self.projection_seed)
        }
    }
}

/// Cosine similarity with `cos(x, 0) = cos(0, x) = 0`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

fn training_gradient(
    model: &ModelState,
    opt: &OptimizerState,
    s: &Sample,
    pre: Preconditioning,
) -> Result<GradientVector> {
    let g = model.per_sample_gradient(s)?;
    match pre {
        Preconditioning::None => Ok(g),
        Preconditioning::Adam => adam_precondition(&g, opt),
    }
}

pub fn score_influence(
    model: &ModelState,
    opt: &OptimizerState,
    pool: &[Sample],
    val: &[Sample],
    p: &InfluenceParams,
) -> Result<ScoreVector> {
    let projection = p.projection(model.num_params());
    score_with_projection(model, opt, pool, val, p, &projection)
}

fn score_with_projection(
    model: &ModelState,
    opt: &OptimizerState,
    pool: &[Sample],
    val: &[Sample],
    p: &InfluenceParams,
    projection: &Projection,
) -> Result<ScoreVector> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if p.preconditioning == Preconditioning::Adam {
        // surface NotAdam / ColdOptimizer before doing any work
        adam_precondition(&GradientVector::zeros(model.num_params()), opt)?;
    }
    let val_grads: Vec<GradientVector> = val
        .par_iter()
        .map(|s| training_gradient(model, opt, s, p.preconditioning))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = match p.aggregation {
        Aggregation::MeanGradient => {
            let mut mean = vec![0.0; model.num_params()];
            for g in &val_grads {
                for (m, x) in mean.iter_mut().zip(&g.0) {
                    *m += x;
                }
            }
            let n = val_grads.len() as f64;
            for m in &mut mean {
                *m /= n;
            }
            vec![projection.apply(&mean)]
        }
        Aggregation::MaxCosine => val_grads.iter().map(|g| projection.apply(&g.0)).collect(),
    };
    let scores = pool
        .par_iter()
        .map(|s| {
            let g = training_gradient(model, opt, s, p.preconditioning)?;
            let pg = projection.apply(&g.0);
            Ok(targets
                .iter()
                .map(|t| cosine(&pg, t))
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreVector::new(pool_ids(pool), scores, "less")
}

/// First-order prediction of how mean validation loss moves after one plain
/// SGD step of size `lr` on `sample`: `-lr · ⟨∇loss(sample), ∇L_val⟩`.
pub fn first_order_val_change(
    model: &ModelState,
    sample: &Sample,
    val: &[Sample],
    lr: f64,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let g = model.per_sample_gradient(sample)?;
    let mut val_grad = GradientVector::zeros(model.num_params());
    for v in val {
        model.accumulate_gradient(v, 1.0 / val.len() as f64, &mut val_grad.0)?;
    }
    Ok(-lr * g.dot(&val_grad))
}

/// The `less` selector. The projection matrix is built once per model size.
pub struct InfluenceSelector {
    params: InfluenceParams,
    projection: Option<(usize, Projection)>,
}

impl InfluenceSelector {
    pub fn new(params: InfluenceParams) -> Self {
        Self {
            params,
            projection: None,
        }
    }

    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        Ok(Self::new(InfluenceParams::from_params(params)?))
    }
}

impl Selector for InfluenceSelector {
    fn name(&self) -> &str {
        "less"
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        let n = ctx.model.num_params();
        if self.projection.as_ref().map(|(dim, _)| *dim) != Some(n) {
            self.projection = Some((n, self.params.projection(n)));
        }
        let (_, projection) = self.projection.as_ref().unwrap();
        score_with_projection(
            ctx.model,
            ctx.opt,
            ctx.pool,
            ctx.val,
            &self.params,
            projection,
        )
    }

    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "less(projection_dim={}, projection_seed={}, projection={}, preconditioning={:?}, aggregation={:?})",
            p.projection_dim,
            p.projection_seed,
            if p.identity_projection { "identity" } else { "rademacher" },
            p.preconditioning,
            p.aggregation
        )
    }
}
