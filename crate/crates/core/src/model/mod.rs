//! Analytic next-token language model used as the training backend.
//!
//! Architecture, per input position `t`:
//!
//! ```text
//! e = Emb[x_t]                       (E)
//! h = tanh(W1ᵀ e + b1)               (H)
//! logits = W2ᵀ h + b2                (V)
//! loss_t = logsumexp(logits) - logits[x_{t+1}]
//! ```
//!
//! The per-sample loss is the mean of `loss_t` over the `len - 1` targets.
//! Parameters live in one flat vector laid out as `[Emb | W1 | b1 | W2 | b2]`,
//! all row-major, so gradients and optimizer moments are plain slices.

mod checkpoint;
mod optim;

pub(crate) use checkpoint::digest_bytes;
pub use checkpoint::{restore, snapshot, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{adam_precondition, train_step, OptimHyper, OptimizerState, StepOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ModelConfig, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Arch {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub(crate) fn layout(&self) -> Layout {
        let (v, e, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        let emb = 0;
        let w1 = emb + v * e;
        let b1 = w1 + e * h;
        let w2 = b1 + h;
        let b2 = w2 + h * v;
        Layout {
            emb,
            w1,
            b1,
            w2,
            b2,
            total: b2 + v,
        }
    }
}

impl From<&ModelConfig> for Arch {
    fn from(c: &ModelConfig) -> Self {
        Arch::new(c.vocab_size, c.embed_dim, c.hidden_dim)
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub emb: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Mean hidden activation of a sample, with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { values, norm }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub arch: Arch,
    pub params: Vec<f64>,
}

impl ModelState {
    /// All parameters zero: uniform predictions, loss `ln V` on every sample.
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            params: vec![0.0; arch.param_count()],
        }
    }

    /// Gaussian initialization with fan-in scaling; biases start at zero.
    pub fn init(arch: Arch, init_scale: f64, seed: u64) -> Self {
        let mut model = Self::zeros(arch);
        if init_scale == 0.0 {
            return model;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = arch.layout();
        let mut fill = |range: std::ops::Range<usize>, std: f64, params: &mut [f64]| {
            let normal = Normal::new(0.0, std * init_scale).expect("finite std");
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        };
        fill(l.emb..l.w1, 1.0, &mut model.params);
        fill(
            l.w1..l.b1,
            1.0 / (arch.embed_dim as f64).sqrt(),
            &mut model.params,
        );
        fill(
            l.w2..l.b2,
            1.0 / (arch.hidden_dim as f64).sqrt(),
            &mut model.params,
        );
        model
    }

    pub fn from_params(arch: Arch, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_tokens(&self, s: &Sample) -> Result<()> {
        if let Some(&tok) = s
            .tokens
            .iter()
            .find(|&&t| t as usize >= self.arch.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                id: s.id,
                token: tok,
                vocab_size: self.arch.vocab_size,
            });
        }
        Ok(())
    }

    fn check_trainable(&self, s: &Sample) -> Result<()> {
        if s.tokens.len() < 2 {
            return Err(Error::TooShort {
                id: s.id,
                len: s.tokens.len(),
            });
        }
        self.check_tokens(s)
    }

    /// Hidden activation for one input token, written into `h`.
    fn hidden(&self, token: u32, h: &mut [f64]) {
        let a = &self.arch;
        let l = a.layout();
        let e_row = &self.params[l.emb + token as usize * a.embed_dim..][..a.embed_dim];
        h.copy_from_slice(&self.params[l.b1..l.b1 + a.hidden_dim]);
        for (i, &ei) in e_row.iter().enumerate() {
            let w_row = &self.params[l.w1 + i * a.hidden_dim..][..a.hidden_dim];
            for (hk, &w) in h.iter_mut().zip(w_row) {
                *hk += ei * w;
            }
        }
        for hk in h.iter_mut() {
            *hk = hk.tanh();
        }
    }

    /// Logits from a hidden activation, written into `logits`.
    fn logits(&self, h: &[f64], logits: &mut [f64]) {
        let a = &self.arch;
        let l = a.layout();
        logits.copy_from_slice(&self.params[l.b2..l.b2 + a.vocab_size]);
        for (k, &hk) in h.iter().enumerate() {
            let w_row = &self.params[l.w2 + k * a.vocab_size..][..a.vocab_size];
            for (z, &w) in logits.iter_mut().zip(w_row) {
                *z += hk * w;
            }
        }
    }

    /// Sum of per-token cross-entropy over all targets of `s`, and the target count.
    pub fn token_loss_sum(&self, s: &Sample) -> Result<(f64, usize)> {
        self.check_trainable(s)?;
        let mut h = vec![0.0; self.arch.hidden_dim];
        let mut logits = vec![0.0; self.arch.vocab_size];
        let mut total = 0.0;
        for w in s.tokens.windows(2) {
            self.hidden(w[0], &mut h);
            self.logits(&h, &mut logits);
            total += cross_entropy(&logits, w[1] as usize);
        }
        Ok((total, s.targets()))
    }

    /// Mean next-token cross-entropy of `s`.
    pub fn per_sample_loss(&self, s: &Sample) -> Result<f64> {
        let (sum, n) = self.token_loss_sum(s)?;
        Ok(sum / n as f64)
    }

    /// Number of targets whose arg-max prediction is correct, and the target count.
    pub fn top1_hits(&self, s: &Sample) -> Result<(usize, usize)> {
        self.check_trainable(s)?;
        let mut h = vec![0.0; self.arch.hidden_dim];
        let mut logits = vec![0.0; self.arch.vocab_size];
        let mut hits = 0;
        for w in s.tokens.windows(2) {
            self.hidden(w[0], &mut h);
            self.logits(&h, &mut logits);
            let best = logits
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &z)| if z > acc.1 { (i, z) } else { acc },
                )
                .0;
            hits += usize::from(best == w[1] as usize);
        }
        Ok((hits, s.targets()))
    }

    /// Exact gradient of [`per_sample_loss`](Self::per_sample_loss) with respect to the parameters.
    pub fn per_sample_gradient(&self, s: &Sample) -> Result<GradientVector> {
        let mut grad = GradientVector::zeros(self.num_params());
        self.accumulate_gradient(s, 1.0, &mut grad.0)?;
        Ok(grad)
    }

    /// Adds `scale * ∇ loss(s)` into `grad` and returns the unscaled loss.
    pub(crate) fn accumulate_gradient(
        &self,
        s: &Sample,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_trainable(s)?;
        let a = self.arch;
        let l = a.layout();
        let (vsz, esz, hsz) = (a.vocab_size, a.embed_dim, a.hidden_dim);
        let n = s.targets() as f64;
        let coef = scale / n;
        let mut h = vec![0.0; hsz];
        let mut logits = vec![0.0; vsz];
        let mut dh = vec![0.0; hsz];
        let mut total = 0.0;
        for w in s.tokens.windows(2) {
            let (x, y) = (w[0] as usize, w[1] as usize);
            self.hidden(w[0], &mut h);
            self.logits(&h, &mut logits);
            total += cross_entropy(&logits, y);
            // softmax in place
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in logits.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            // dlogits = coef * (p - onehot(y)), stored back into `logits`
            for v in logits.iter_mut() {
                *v *= coef / z;
            }
            logits[y] -= coef;
            let dlogits = &logits;

            for (gb, &d) in grad[l.b2..l.b2 + vsz].iter_mut().zip(dlogits) {
                *gb += d;
            }
            for k in 0..hsz {
                let w_row = &self.params[l.w2 + k * vsz..][..vsz];
                let g_row = &mut grad[l.w2 + k * vsz..][..vsz];
                let hk = h[k];
                let mut acc = 0.0;
                for ((g, &wv), &d) in g_row.iter_mut().zip(w_row).zip(dlogits) {
                    *g += hk * d;
                    acc += wv * d;
                }
                // through tanh
                dh[k] = acc * (1.0 - hk * hk);
            }
            for (gb, &d) in grad[l.b1..l.b1 + hsz].iter_mut().zip(&dh) {
                *gb += d;
            }
            let e_off = l.emb + x * esz;
            for i in 0..esz {
                let ei = self.params[e_off + i];
                let w_row = &self.params[l.w1 + i * hsz..][..hsz];
                let g_row = &mut grad[l.w1 + i * hsz..][..hsz];
                let mut acc = 0.0;
                for ((g, &wv), &d) in g_row.iter_mut().zip(w_row).zip(&dh) {
                    *g += ei * d;
                    acc += wv * d;
                }
                grad[e_off + i] += acc;
            }
        }
        Ok(total / n)
    }

    /// Mean hidden activation over every position of `s` (including the last).
    pub fn embed(&self, s: &Sample) -> Result<EmbeddingVector> {
        if s.tokens.is_empty() {
            return Err(Error::TooShort { id: s.id, len: 0 });
        }
        self.check_tokens(s)?;
        let hsz = self.arch.hidden_dim;
        let mut h = vec![0.0; hsz];
        let mut acc = vec![0.0; hsz];
        for &tok in &s.tokens {
            self.hidden(tok, &mut h);
            for (a, &x) in acc.iter_mut().zip(&h) {
                *a += x;
            }
        }
        let n = s.tokens.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        Ok(EmbeddingVector::new(acc))
    }

    /// Uses the sample's cached embedding when it has one of the right width.
    pub fn embedding_of(&self, s: &Sample) -> Result<EmbeddingVector> {
        match &s.embedding {
            Some(e) if !e.is_empty() => Ok(EmbeddingVector::new(e.clone())),
            _ => self.embed(s),
        }
    }
}

fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Straightforward re-implementation with nested vectors and no shared helpers.
    struct NaiveModel {
        emb: Vec<Vec<f64>>,
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
    }

    impl NaiveModel {
        fn from_flat(a: Arch, p: &[f64]) -> Self {
            let mut it = p.iter().copied();
            let mut take = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
                (0..rows)
                    .map(|_| (0..cols).map(|_| it.next().unwrap()).collect())
                    .collect()
            };
            let emb = take(a.vocab_size, a.embed_dim);
            let w1 = take(a.embed_dim, a.hidden_dim);
            let b1 = take(1, a.hidden_dim).remove(0);
            let w2 = take(a.hidden_dim, a.vocab_size);
            let b2 = take(1, a.vocab_size).remove(0);
            Self {
                emb,
                w1,
                b1,
                w2,
                b2,
            }
        }

        fn hidden(&self, tok: usize) -> Vec<f64> {
            (0..self.b1.len())
                .map(|k| {
                    let mut z = self.b1[k];
                    for i in 0..self.emb[tok].len() {
                        z += self.emb[tok][i] * self.w1[i][k];
                    }
                    z.tanh()
                })
                .collect()
        }

        fn loss(&self, tokens: &[u32]) -> f64 {
            let mut total = 0.0;
            for t in 0..tokens.len() - 1 {
                let h = self.hidden(tokens[t] as usize);
                let logits: Vec<f64> = (0..self.b2.len())
                    .map(|v| self.b2[v] + (0..h.len()).map(|k| h[k] * self.w2[k][v]).sum::<f64>())
                    .collect();
                let denom: f64 = logits.iter().map(|z| z.exp()).sum();
                let p = logits[tokens[t + 1] as usize].exp() / denom;
                total += -p.ln();
            }
            total / (tokens.len() - 1) as f64
        }

        fn embed(&self, tokens: &[u32]) -> Vec<f64> {
            let mut acc = vec![0.0; self.b1.len()];
            for &t in tokens {
                for (a, h) in acc.iter_mut().zip(self.hidden(t as usize)) {
                    *a += h;
                }
            }
            acc.iter().map(|a| a / tokens.len() as f64).collect()
        }
    }

    fn small_arch() -> Arch {
        Arch::new(11, 4, 5)
    }

    fn sample(tokens: Vec<u32>) -> Sample {
        Sample::new(0, 0, tokens)
    }

    #[test]
    fn zero_model_loss_is_ln_v() {
        let a = Arch::new(64, 16, 32);
        let m = ModelState::zeros(a);
        let l = m.per_sample_loss(&sample(vec![3, 9, 1, 63, 0])).unwrap();
        assert!((l - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forced_output_gives_zero_loss_and_flat_gradient() {
        let a = small_arch();
        let mut m = ModelState::zeros(a);
        let l = a.layout();
        m.params[l.b2 + 7] = 60.0;
        let s = sample(vec![2, 7, 7, 7]);
        assert!(m.per_sample_loss(&s).unwrap() < 1e-20);
        assert!(m.per_sample_gradient(&s).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn loss_matches_naive_forward_pass() {
        let a = Arch::new(64, 16, 32);
        let m = ModelState::init(a, 1.0, 7);
        let s = sample(vec![5, 17, 33, 2, 63, 0, 41, 12]);
        let naive = NaiveModel::from_flat(a, &m.params);
        let diff = (m.per_sample_loss(&s).unwrap() - naive.loss(&s.tokens)).abs();
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn embedding_matches_naive_forward_pass() {
        let a = Arch::new(64, 16, 32);
        let m = ModelState::init(a, 1.0, 7);
        let s = sample(vec![5, 17, 33, 2, 63, 0, 41, 12]);
        let naive = NaiveModel::from_flat(a, &m.params).embed(&s.tokens);
        let e = m.embed(&s).unwrap();
        for (x, y) in e.values().iter().zip(&naive) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!((e.norm() - naive.iter().map(|x| x * x).sum::<f64>().sqrt()).abs() < 1e-9);
    }

    #[test]
    fn single_token_embedding_is_its_hidden_activation() {
        let a = small_arch();
        let m = ModelState::init(a, 1.0, 3);
        let e = m.embed(&sample(vec![4])).unwrap();
        let naive = NaiveModel::from_flat(a, &m.params).hidden(4);
        assert_eq!(e.values().len(), a.hidden_dim);
        for (x, y) in e.values().iter().zip(&naive) {
            assert!((x - y).abs() < 1e-14);
        }
        assert_eq!(
            m.embed(&sample(vec![4, 2])).unwrap(),
            m.embed(&sample(vec![4, 2])).unwrap()
        );
    }

    #[test]
    fn single_token_sample_is_too_short() {
        let m = ModelState::zeros(small_arch());
        assert!(matches!(
            m.per_sample_loss(&sample(vec![1])),
            Err(Error::TooShort { .. })
        ));
        assert!(matches!(
            m.per_sample_gradient(&sample(vec![1])),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn out_of_vocab_token_rejected() {
        let m = ModelState::zeros(small_arch());
        assert!(matches!(
            m.per_sample_loss(&sample(vec![1, 11])),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_is_deterministic() {
        let m = ModelState::init(small_arch(), 1.0, 9);
        let s = sample(vec![1, 2, 3, 4, 10]);
        let g1 = m.per_sample_gradient(&s).unwrap();
        let g2 = m.per_sample_gradient(&s.clone()).unwrap();
        assert!(g1
            .0
            .iter()
            .zip(&g2.0)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    fn finite_difference_check(m: &ModelState, s: &Sample) {
        let g = m.per_sample_gradient(s).unwrap();
        let h = 1e-5;
        let mut probe = m.clone();
        for i in 0..m.num_params() {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = probe.per_sample_loss(s).unwrap();
            probe.params[i] = orig - h;
            let down = probe.per_sample_loss(s).unwrap();
            probe.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let tol = f64::max(1e-6, 1e-4 * g.0[i].abs());
            assert!(
                (fd - g.0[i]).abs() <= tol,
                "coord {i}: fd {fd} vs analytic {}",
                g.0[i]
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..10_000, len in 2usize..9) {
            let a = small_arch();
            let m = ModelState::init(a, 1.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let tokens = (0..len).map(|_| rng.gen_range(0..a.vocab_size as u32)).collect();
            finite_difference_check(&m, &sample(tokens));
        }

        #[test]
        fn loss_is_non_negative(seed in 0u64..10_000, len in 2usize..12) {
            let a = small_arch();
            let m = ModelState::init(a, 2.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tokens = (0..len).map(|_| rng.gen_range(0..a.vocab_size as u32)).collect();
            prop_assert!(m.per_sample_loss(&sample(tokens)).unwrap() >= 0.0);
        }
    }
}
