//! Embedding-space scorers: nearest-validation cosine (`near`) and
//! retrieval mass with a KDE redundancy penalty (`tsds`).
//!
//! Neighbor search is exact brute force. Ties in distance or similarity are
//! broken by the lower sample id.

use std::cmp::Ordering;

use rayon::prelude::*;

use super::influence::cosine;
use super::{ScoreVector, SelectionContext, Selector};
use crate::error::{Error, Result};
use crate::model::{EmbeddingVector, ModelState};
use crate::types::{ComponentParams, Sample};

/// Embeddings paired with the ids of the samples they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSet {
    pub ids: Vec<u64>,
    pub vectors: Vec<EmbeddingVector>,
}

impl EmbeddedSet {
    pub fn new(ids: Vec<u64>, vectors: Vec<EmbeddingVector>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                got: vectors.len(),
            });
        }
        Ok(Self { ids, vectors })
    }

    /// Embeds every sample with `model` (or uses the sample's cached embedding).
    pub fn from_samples(model: &ModelState, samples: &[Sample]) -> Result<Self> {
        let vectors = samples
            .par_iter()
            .map(|s| model.embedding_of(s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples.iter().map(|s| s.id).collect(), vectors)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Mean cosine similarity to the `k` most similar validation embeddings.
pub fn score_knn(pool: &EmbeddedSet, val: &EmbeddedSet, k: usize) -> Result<ScoreVector> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if k == 0 || k > val.len() {
        return Err(Error::BadParams(format!(
            "k = {k} must lie in 1..={} (validation size)",
            val.len()
        )));
    }
    let scores = pool
        .vectors
        .par_iter()
        .map(|e| {
            let mut sims: Vec<(f64, u64)> = val
                .vectors
                .iter()
                .zip(&val.ids)
                .map(|(v, &id)| (cosine(e.values(), v.values()), id))
                .collect();
            sims.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            sims[..k].iter().map(|(c, _)| c).sum::<f64>() / k as f64
        })
        .collect();
    ScoreVector::new(pool.ids.clone(), scores, "near")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsdsParams {
    /// Neighbors retrieved per validation query.
    pub max_k: usize,
    /// Neighbors used in each density estimate.
    pub kde_k: usize,
    pub sigma: f64,
    /// Share of the score that is density-penalized (the rest is raw mass).
    pub tradeoff_alpha: f64,
    /// Strength of the density penalty.
    pub c: f64,
}

impl Default for TsdsParams {
    fn default() -> Self {
        Self {
            max_k: 5000,
            kde_k: 1000,
            sigma: 0.75,
            tradeoff_alpha: 0.6,
            c: 5.0,
        }
    }
}

impl TsdsParams {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("tsds", &["max_K", "kde_K", "sigma", "alpha", "C"])?;
        let d = Self::default();
        let p = Self {
            max_k: params.usize_or("max_K", d.max_k)?,
            kde_k: params.usize_or("kde_K", d.kde_k)?,
            sigma: params.f64_or("sigma", d.sigma)?,
            tradeoff_alpha: params.f64_or("alpha", d.tradeoff_alpha)?,
            c: params.f64_or("C", d.c)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::BadParams(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.max_k == 0 || self.kde_k == 0 {
            return Err(Error::BadParams("max_K and kde_K must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tradeoff_alpha) {
            return Err(Error::BadParams("alpha must lie in [0, 1]".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::BadParams("C must be > 0".into()));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` smallest `(distance, id)` pairs, in ascending order.
fn nearest(mut cands: Vec<(f64, u64, usize)>, k: usize) -> Vec<(f64, usize)> {
    let by_dist = |a: &(f64, u64, usize), b: &(f64, u64, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < cands.len() {
        cands.select_nth_unstable_by(k, by_dist);
        cands.truncate(k);
    }
    cands.sort_by(by_dist);
    cands.into_iter().map(|(d, _, i)| (d, i)).collect()
}

/// Retrieval mass with a density penalty.
///
/// 1. Each validation query retrieves its `max_k` nearest pool embeddings; each
///    retrieved sample gains `exp(-‖e - q‖² / 2σ²)`.
/// 2. Each sample with mass gets a density `p̂` = mean Gaussian kernel over its
///    `kde_k` nearest pool neighbors (itself excluded; fewer if the pool is small).
/// 3. `score = α · mass / (1 + C·p̂) + (1 - α) · mass`. Zero mass scores zero.
pub fn score_tsds(pool: &EmbeddedSet, val: &EmbeddedSet, p: &TsdsParams) -> Result<ScoreVector> {
    p.validate()?;
    if pool.is_empty() {
        return Err(Error::BadParams("cannot score an empty pool".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let two_sigma_sq = 2.0 * p.sigma * p.sigma;
    let kernel = |d2: f64| (-d2 / two_sigma_sq).exp();

    let per_query: Vec<Vec<(f64, usize)>> = val
        .vectors
        .par_iter()
        .map(|q| {
            let cands = pool
                .vectors
                .iter()
                .enumerate()
                .map(|(i, e)| (sq_dist(e.values(), q.values()), pool.ids[i], i))
                .collect();
            nearest(cands, p.max_k)
        })
        .collect();
    let mut mass = vec![0.0; pool.len()];
    for hits in &per_query {
        for &(d2, i) in hits {
            mass[i] += kernel(d2);
        }
    }

    let density: Vec<f64> = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            if mass[i] == 0.0 {
                return 0.0;
            }
            let ei = pool.vectors[i].values();
            let cands: Vec<(f64, u64, usize)> = pool
                .vectors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, e)| (sq_dist(ei, e.values()), pool.ids[j], j))
                .collect();
            let neigh = nearest(cands, p.kde_k);
            if neigh.is_empty() {
                0.0
            } else {
                neigh.iter().map(|&(d2, _)| kernel(d2)).sum::<f64>() / neigh.len() as f64
            }
        })
        .collect();

    let a = p.tradeoff_alpha;
    let scores = mass
        .iter()
        .zip(&density)
        .map(|(&m, &d)| {
            if m == 0.0 {
                0.0
            } else {
                a * m / (1.0 + p.c * d) + (1.0 - a) * m
            }
        })
        .collect();
    ScoreVector::new(pool.ids.clone(), scores, "tsds")
}

/// The `near` selector.
#[derive(Debug)]
pub struct KnnSelector {
    pub k: usize,
}

impl KnnSelector {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("near", &["k"])?;
        let k = params.usize_or("k", 10)?;
        if k == 0 {
            return Err(Error::BadParams("k must be >= 1".into()));
        }
        Ok(Self { k })
    }
}

impl Selector for KnnSelector {
    fn name(&self) -> &str {
        "near"
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        let pool = EmbeddedSet::from_samples(ctx.model, ctx.pool)?;
        let val = EmbeddedSet::from_samples(ctx.model, ctx.val)?;
        score_knn(&pool, &val, self.k.min(val.len().max(1)))
    }

    fn describe(&self) -> String {
        format!("near(k={})", self.k)
    }
}

/// The `tsds` selector.
#[derive(Debug)]
pub struct TsdsSelector {
    pub params: TsdsParams,
}

impl TsdsSelector {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        Ok(Self {
            params: TsdsParams::from_params(params)?,
        })
    }
}

impl Selector for TsdsSelector {
    fn name(&self) -> &str {
        "tsds"
    }

    fn score(&mut self, ctx: &SelectionContext<'_>) -> Result<ScoreVector> {
        let pool = EmbeddedSet::from_samples(ctx.model, ctx.pool)?;
        let val = EmbeddedSet::from_samples(ctx.model, ctx.val)?;
        score_tsds(&pool, &val, &self.params)
    }

    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "tsds(max_K={}, kde_K={}, sigma={}, alpha={}, C={})",
            p.max_k, p.kde_k, p.sigma, p.tradeoff_alpha, p.c
        )
    }
}
