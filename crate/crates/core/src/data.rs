//! Synthetic multi-domain corpora with planted, learnable structure.
//!
//! Each domain prefers its own contiguous vocabulary slice (Zipf-distributed),
//! shares a small common slice with every other domain, and follows a
//! domain-specific bigram kernel: with probability `bigram_strength` the next
//! token is the current token's designated successor. Noise domains draw every
//! token uniformly from the whole vocabulary, so their loss cannot go below `ln V`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Corpus, GenerateConfig, MixtureWeights, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub vocab_size: usize,
    /// `(start, len)` of the domain's preferred vocabulary slice.
    pub preferred: (usize, usize),
    /// `(start, len)` of the slice shared by all domains.
    pub shared: (usize, usize),
    pub shared_frac: f64,
    pub zipf_exponent: f64,
    pub bigram_strength: f64,
    /// Seed of the successor table.
    pub kernel_seed: u64,
    pub mean_length: usize,
    pub length_jitter: usize,
    /// Uniform tokens over the whole vocabulary; ignores every other knob.
    pub noise: bool,
}

impl DomainSpec {
    /// The `index`-th of `k` domains over a `vocab_size` vocabulary. The first
    /// eighth of the vocabulary is shared; the rest is split evenly.
    pub fn preset(name: &str, index: usize, k: usize, vocab_size: usize, seed: u64) -> Self {
        let shared_len = (vocab_size / 8).max(1);
        let slice = ((vocab_size - shared_len) / k.max(1)).max(1);
        let start = (shared_len + index * slice).min(vocab_size - 1);
        Self {
            name: name.to_string(),
            vocab_size,
            preferred: (start, slice.min(vocab_size - start)),
            shared: (0, shared_len),
            shared_frac: 0.1,
            zipf_exponent: 1.0,
            bigram_strength: 0.6,
            kernel_seed: derive_seed(seed, 0x6b65_726e + index as u64),
            mean_length: 16,
            length_jitter: 4,
            noise: false,
        }
    }

    pub fn noise(name: &str, vocab_size: usize) -> Self {
        Self {
            noise: true,
            ..Self::preset(name, 0, 1, vocab_size, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_vocab = |(s, l): (usize, usize)| l >= 1 && s + l <= self.vocab_size;
        if !in_vocab(self.preferred) || !in_vocab(self.shared) {
            return Err(Error::BadProportions(format!(
                "domain `{}` has a vocabulary slice outside [0, {})",
                self.name, self.vocab_size
            )));
        }
        if self.mean_length < 2 {
            return Err(Error::BadProportions(format!(
                "domain `{}` needs mean_length >= 2",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.shared_frac) || !(0.0..=1.0).contains(&self.bigram_strength)
        {
            return Err(Error::BadProportions(format!(
                "domain `{}`: shared_frac and bigram_strength must lie in [0, 1]",
                self.name
            )));
        }
        Ok(())
    }
}

/// Precomputed sampling tables for one domain.
struct TokenSource<'a> {
    spec: &'a DomainSpec,
    preferred: WeightedIndex<f64>,
    shared: WeightedIndex<f64>,
    successor: Vec<u32>,
}

impl<'a> TokenSource<'a> {
    fn new(spec: &'a DomainSpec) -> Self {
        let zipf = |len: usize| {
            WeightedIndex::new((1..=len).map(|r| (r as f64).powf(-spec.zipf_exponent)))
                .expect("non-empty positive weights")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.kernel_seed);
        let (ps, pl) = spec.preferred;
        let successor = (0..spec.vocab_size)
            .map(|_| (ps + rng.gen_range(0..pl)) as u32)
            .collect();
        Self {
            spec,
            preferred: zipf(spec.preferred.1),
            shared: zipf(spec.shared.1),
            successor,
        }
    }

    fn unigram(&self, rng: &mut ChaCha8Rng) -> u32 {
        let s = self.spec;
        if rng.gen::<f64>() < s.shared_frac {
            (s.shared.0 + self.shared.sample(rng)) as u32
        } else {
            (s.preferred.0 + self.preferred.sample(rng)) as u32
        }
    }

    fn sequence(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let s = self.spec;
        let jitter = s.length_jitter as i64;
        let len = (s.mean_length as i64 + rng.gen_range(-jitter..=jitter)).max(2) as usize;
        if s.noise {
            return (0..len)
                .map(|_| rng.gen_range(0..s.vocab_size as u32))
                .collect();
        }
        let mut out = Vec::with_capacity(len);
        out.push(self.unigram(rng));
        while out.len() < len {
            let prev = *out.last().unwrap() as usize;
            let next = if rng.gen::<f64>() < s.bigram_strength {
                self.successor[prev]
            } else {
                self.unigram(rng)
            };
            out.push(next);
        }
        out
    }
}

/// Integer counts summing to `n` that follow `proportions`: floors first, then
/// the leftover units go to the largest fractional parts (ties to lower index).
pub fn largest_remainder(n: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    // absorb representation error such as 10000 * 0.541 = 5409.999...
    let mut counts: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// `n` samples split across domains by largest-remainder rounding of
/// `n · proportions`. Ids run from `0` in domain order.
pub fn generate_corpus(
    specs: &[DomainSpec],
    proportions: &MixtureWeights,
    n: usize,
    seed: u64,
) -> Result<Corpus> {
    generate_with_offset(specs, proportions.as_slice(), n, seed, 0)
}

fn generate_with_offset(
    specs: &[DomainSpec],
    proportions: &[f64],
    n: usize,
    seed: u64,
    first_id: u64,
) -> Result<Corpus> {
    if specs.len() != proportions.len() {
        return Err(Error::BadProportions(format!(
            "{} domain specs but {} proportions",
            specs.len(),
            proportions.len()
        )));
    }
    if n < specs.len() {
        return Err(Error::BadProportions(format!(
            "n = {n} is smaller than the number of domains ({})",
            specs.len()
        )));
    }
    for s in specs {
        s.validate()?;
    }
    let counts = largest_remainder(n, proportions);
    let mut samples = Vec::with_capacity(n);
    let mut id = first_id;
    for (d, (spec, &count)) in specs.iter().zip(&counts).enumerate() {
        let source = TokenSource::new(spec);
        for _ in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
            samples.push(Sample::new(id, d, source.sequence(&mut rng)));
            id += 1;
        }
    }
    Corpus::new(specs.iter().map(|s| s.name.clone()).collect(), samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Domain counts follow the training corpus proportions.
    InDistribution,
    SingleDomain(usize),
    Skewed(Vec<f64>),
}

/// Fresh validation samples whose ids start right after the corpus' largest id.
pub fn make_validation(
    specs: &[DomainSpec],
    corpus: &Corpus,
    mode: &ValidationMode,
    m: usize,
    seed: u64,
) -> Result<Corpus> {
    let k = specs.len();
    if m == 0 {
        return Err(Error::BadMode("validation size m must be >= 1".into()));
    }
    if k != corpus.num_domains() {
        return Err(Error::BadMode(format!(
            "{k} domain specs for a corpus with {} domains",
            corpus.num_domains()
        )));
    }
    let proportions = match mode {
        ValidationMode::InDistribution => corpus.empirical_proportions()?.into_vec(),
        ValidationMode::SingleDomain(d) => {
            if *d >= k {
                return Err(Error::BadMode(format!(
                    "single_domain({d}) but only {k} domains"
                )));
            }
            MixtureWeights::one_hot(k, *d).into_vec()
        }
        ValidationMode::Skewed(w) => {
            if w.len() != k {
                return Err(Error::BadMode(format!(
                    "skewed weights have {} entries, need {k}",
                    w.len()
                )));
            }
            MixtureWeights::from_config(w.clone())
                .map_err(|e| Error::BadMode(e.to_string()))?
                .into_vec()
        }
    };
    let first_id = corpus.max_id().map_or(0, |x| x + 1);
    let counts = largest_remainder(m, &proportions);
    let mut samples = Vec::with_capacity(m);
    let mut id = first_id;
    let val_seed = derive_seed(seed, 0x7661_6c00);
    for (d, (spec, &count)) in specs.iter().zip(&counts).enumerate() {
        let source = TokenSource::new(spec);
        for _ in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(val_seed, id));
            samples.push(Sample::new(id, d, source.sequence(&mut rng)));
            id += 1;
        }
    }
    Corpus::new(corpus.domain_names().to_vec(), samples)
}

/// Domain specs for a `data.generate` config block.
pub fn specs_from_config(cfg: &GenerateConfig, vocab_size: usize) -> Result<Vec<DomainSpec>> {
    let k = cfg.domains.len();
    if k == 0 {
        return Err(Error::BadProportions("no domains listed".into()));
    }
    if let Some(&bad) = cfg.noise.iter().find(|&&d| d >= k) {
        return Err(Error::BadProportions(format!(
            "noise domain {bad} out of range"
        )));
    }
    Ok(cfg
        .domains
        .iter()
        .enumerate()
        .map(|(i, name)| {
            if cfg.noise.contains(&i) {
                DomainSpec::noise(name, vocab_size)
            } else {
                DomainSpec::preset(name, i, k, vocab_size, cfg.seed)
            }
        })
        .collect())
}

/// SplitMix64 finalizer over `base ^ salt`; used to give each sample its own stream.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
