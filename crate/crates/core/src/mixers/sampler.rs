use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Corpus, MixtureWeights, Sample};

/// Samples available for drawing, grouped by domain. Within a domain the
/// samples are kept in ascending id order so equal id sets always give equal
/// pools.
#[derive(Debug, Clone)]
pub struct DomainPools<'a> {
    pools: Vec<Vec<&'a Sample>>,
}

impl<'a> DomainPools<'a> {
    pub fn from_corpus(corpus: &'a Corpus) -> Self {
        let pools = (0..corpus.num_domains())
            .map(|d| {
                corpus
                    .domain_ids(d)
                    .iter()
                    .map(|&id| corpus.get(id).expect("indexed id"))
                    .collect()
            })
            .collect();
        Self { pools }
    }

    /// Restricts the pools to `ids`; unknown ids are an error.
    pub fn from_ids(corpus: &'a Corpus, ids: &[u64]) -> Result<Self> {
        let mut pools: Vec<Vec<&Sample>> = vec![Vec::new(); corpus.num_domains()];
        for &id in ids {
            let s = corpus.get(id).ok_or_else(|| {
                Error::InvalidCorpus(format!("selected id {id} is not in the corpus"))
            })?;
            pools[s.domain].push(s);
        }
        for p in &mut pools {
            p.sort_by_key(|s| s.id);
            p.dedup_by_key(|s| s.id);
        }
        Ok(Self { pools })
    }

    pub fn num_domains(&self) -> usize {
        self.pools.len()
    }

    pub fn domain(&self, d: usize) -> &[&'a Sample] {
        &self.pools[d]
    }

    pub fn len(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Share of pooled samples per domain.
    pub fn proportions(&self) -> Result<MixtureWeights> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidCorpus("no samples to draw from".into()));
        }
        MixtureWeights::new(
            self.pools
                .iter()
                .map(|p| p.len() as f64 / n as f64)
                .collect(),
        )
    }

    /// Draws `batch_size` domains i.i.d. from `policy`, then one sample uniformly
    /// (with replacement) from each drawn domain.
    pub fn sample(
        &self,
        policy: &MixtureWeights,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<&'a Sample>> {
        if batch_size == 0 {
            return Err(Error::BadParams("batch_size must be >= 1".into()));
        }
        if policy.len() != self.pools.len() {
            return Err(Error::LengthMismatch {
                expected: self.pools.len(),
                got: policy.len(),
            });
        }
        if let Some(domain) =
            (0..self.pools.len()).find(|&d| policy.as_slice()[d] > 0.0 && self.pools[d].is_empty())
        {
            return Err(Error::EmptyDomainWithMass { domain });
        }
        let domains =
            WeightedIndex::new(policy.as_slice()).map_err(|e| Error::BadSimplex(e.to_string()))?;
        Ok((0..batch_size)
            .map(|_| {
                let pool = &self.pools[domains.sample(rng)];
                pool[rng.gen_range(0..pool.len())]
            })
            .collect())
    }
}

/// One batch drawn from the whole corpus according to `policy`.
pub fn sample_batch<'a>(
    policy: &MixtureWeights,
    corpus: &'a Corpus,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a Sample>> {
    DomainPools::from_corpus(corpus).sample(policy, batch_size, rng)
}
