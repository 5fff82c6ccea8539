use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{pool_ids, ScoreVector, SelectionContext, Selector};
use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::model::{restore, snapshot, Checkpoint, ModelState, OptimizerState};
use crate::types::{ComponentParams, Sample};

fn losses(model: &ModelState, pool: &[Sample]) -> Result<Vec<f64>> {
    pool.par_iter().map(|s| model.per_sample_loss(s)).collect()
}

/// Current per-sample loss; hard examples first.
pub fn score_loss(model: &ModelState, pool: &[Sample]) -> Result<ScoreVector> {
    if pool.is_empty() {
        return Err(Error::BadParams("cannot score an empty pool".into()));
    }
    ScoreVector::new(pool_ids(pool), losses(model, pool)?, "loss")
}

/// Learning progress since `reference`: `loss_ref(s) - loss_now(s)`.
pub fn score_delta_loss(
    model: &ModelState,
    reference: &Checkpoint,
    pool: &[Sample],
) -> Result<ScoreVector> {
    if pool.is_empty() {
        return Err(Error::BadParams("cannot score an empty pool".into()));
    }
    let (ref_model, _) = restore(reference)?;
    let before = losses(&ref_model, pool)?;
    let now = losses(model, pool)?;
    let scores = before.iter().zip(&now).map(|(b, n)| b - n).collect();
    ScoreVector::new(pool_ids(pool), scores, "delta_loss")
}

#[derive(Debug, Default)]
pub struct LossSelector;

impl LossSelector {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("loss", &[])?;
        Ok(Self)
    }
}

impl Selector for LossSelector {
    fn name(&self) -> &str {
        "loss"
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        score_loss(ctx.model, ctx.pool)
    }
}

/// Scores progress against the model seen at the previous invocation (or at
/// the start of training for the first one).
#[derive(Debug)]
pub struct DeltaLossSelector {
    hardest_first: bool,
    reference: Option<Checkpoint>,
}

impl DeltaLossSelector {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("delta_loss", &["hardest_first"])?;
        Ok(Self {
            hardest_first: params.bool_or("hardest_first", false)?,
            reference: None,
        })
    }
}

impl Selector for DeltaLossSelector {
    fn name(&self) -> &str {
        "delta_loss"
    }

    fn begin(&mut self, model: &ModelState, opt: &OptimizerState) -> Result<()> {
        self.reference = Some(snapshot(model, opt));
        Ok(())
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        let reference = match self.reference.take() {
            Some(r) => r,
            None => snapshot(ctx.model, ctx.opt),
        };
        let mut sv = score_delta_loss(ctx.model, &reference, ctx.pool)?;
        if self.hardest_first {
            for s in &mut sv.scores {
                *s = -*s;
            }
        }
        self.reference = Some(snapshot(ctx.model, ctx.opt));
        Ok(sv)
    }

    fn describe(&self) -> String {
        format!("delta_loss(hardest_first={})", self.hardest_first)
    }
}

/// Uniform random scores; seeded by run seed and step.
#[derive(Debug, Default)]
pub struct RandomSelector;

impl RandomSelector {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("random", &[])?;
        Ok(Self)
    }
}

impl Selector for RandomSelector {
    fn name(&self) -> &str {
        "random"
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, 0x5e1e_c700 + ctx.step as u64));
        let scores = ctx.pool.iter().map(|_| rng.gen::<f64>()).collect();
        ScoreVector::new(pool_ids(ctx.pool), scores, "random")
    }
}
