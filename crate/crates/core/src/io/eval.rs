use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::types::Corpus;

/// Validation losses as mean per-token cross-entropy (log-perplexity).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEval {
    /// `None` for domains with no validation samples.
    pub per_domain: Vec<Option<f64>>,
    pub tokens: Vec<u64>,
    /// Token-weighted mean over every scored token.
    pub overall: f64,
}

pub fn eval_per_domain(model: &ModelState, val: &Corpus) -> Result<DomainEval> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let parts = val
        .samples()
        .par_iter()
        .map(|s| model.token_loss_sum(s))
        .collect::<Result<Vec<_>>>()?;
    let k = val.num_domains();
    let mut sums = vec![0.0; k];
    let mut tokens = vec![0u64; k];
    for (s, (sum, n)) in val.samples().iter().zip(&parts) {
        sums[s.domain] += sum;
        tokens[s.domain] += *n as u64;
    }
    let per_domain = sums
        .iter()
        .zip(&tokens)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let total_tokens: u64 = tokens.iter().sum();
    let overall = sums.iter().sum::<f64>() / total_tokens as f64;
    Ok(DomainEval {
        per_domain,
        tokens,
        overall,
    })
}
