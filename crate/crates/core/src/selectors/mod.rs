//! Sample scoring and top-k selection.
//!
//! Every scorer returns a [`ScoreVector`] aligned with the pool; higher scores
//! mean higher selection priority. [`select`] turns scores into an id list.

mod embedding;
mod influence;
mod loss;
mod probe;
mod projection;

pub use embedding::{score_knn, score_tsds, EmbeddedSet, KnnSelector, TsdsParams, TsdsSelector};
pub use influence::{
    cosine, first_order_val_change, score_influence, Aggregation, InfluenceParams,
    InfluenceSelector, Preconditioning,
};
pub use loss::{score_delta_loss, score_loss, DeltaLossSelector, LossSelector, RandomSelector};
pub use probe::{score_probe, top1_error, val_loss, ProbeMetric, ProbeSelector};
pub use projection::Projection;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelState, OptimizerState};
use crate::types::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub method: String,
}

impl ScoreVector {
    pub fn new(ids: Vec<u64>, scores: Vec<f64>, method: &str) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                got: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{method} score for sample {}",
                ids[i]
            )));
        }
        Ok(Self {
            ids,
            scores,
            method: method.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Ids of the `k` highest scores, by descending score then ascending id.
pub fn select(scores: &ScoreVector, k: usize) -> Result<Vec<u64>> {
    let n = scores.len();
    if k > n {
        return Err(Error::KTooLarge { k, pool: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .partial_cmp(&scores.scores[a])
            .unwrap_or(Ordering::Equal)
            .then(scores.ids[a].cmp(&scores.ids[b]))
    });
    Ok(order.into_iter().take(k).map(|i| scores.ids[i]).collect())
}

/// Everything a selector may look at when it fires.
pub struct SelectionContext<'a> {
    pub model: &'a ModelState,
    pub opt: &'a OptimizerState,
    pub pool: &'a [Sample],
    pub val: &'a [Sample],
    pub step: usize,
    pub seed: u64,
}

/// A pluggable scoring strategy for the select trainer.
pub trait Selector: Send {
    fn name(&self) -> &str;

    /// Called once before training starts.
    fn begin(&mut self, _model: &ModelState, _opt: &OptimizerState) -> Result<()> {
        Ok(())
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector>;

    /// Human-readable parameter summary for the run log.
    fn describe(&self) -> String {
        self.name().to_string()
    }
}

pub(crate) fn pool_ids(pool: &[Sample]) -> Vec<u64> {
    pool.iter().map(|s| s.id).collect()
}
