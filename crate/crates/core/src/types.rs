//! Domain types shared by every other module. No algorithm logic lives here.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::ValidationMode;
use crate::error::{Error, Result};

/// Tolerance on `Σ w = 1` for weights produced inside the engine.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance on `Σ w = 1` for human-written proportions read from a config file.
pub const CONFIG_SIMPLEX_TOL: f64 = 1e-6;

/// A tokenized training or validation example tagged with its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub domain: usize,
    pub tokens: Vec<u32>,
    /// Optional precomputed embedding. Embedding-space selectors use it instead
    /// of asking the model when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(id: u64, domain: usize, tokens: Vec<u32>) -> Self {
        Self {
            id,
            domain,
            tokens,
            embedding: None,
        }
    }

    /// Number of next-token targets, i.e. `len - 1`.
    pub fn targets(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }
}

/// An in-memory set of samples partitioned by domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<Sample>,
    domain_names: Vec<String>,
    domain_index: Vec<Vec<u64>>,
    position: HashMap<u64, usize>,
}

impl Corpus {
    pub fn new(domain_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if domain_names.is_empty() {
            return Err(Error::InvalidCorpus(
                "a corpus needs at least one domain".into(),
            ));
        }
        let k = domain_names.len();
        let mut domain_index = vec![Vec::new(); k];
        let mut position = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(Error::InvalidCorpus(format!(
                    "sample {} has no tokens",
                    s.id
                )));
            }
            if s.domain >= k {
                return Err(Error::InvalidCorpus(format!(
                    "sample {} has domain {} but the corpus has {} domains",
                    s.id, s.domain, k
                )));
            }
            if position.insert(s.id, pos).is_some() {
                return Err(Error::InvalidCorpus(format!(
                    "duplicate sample id {}",
                    s.id
                )));
            }
            domain_index[s.domain].push(s.id);
        }
        for ids in &mut domain_index {
            ids.sort_unstable();
        }
        Ok(Self {
            samples,
            domain_names,
            domain_index,
            position,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample ids of one domain, ascending.
    pub fn domain_ids(&self, domain: usize) -> &[u64] {
        &self.domain_index[domain]
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.position.get(&id).map(|&p| &self.samples[p])
    }

    pub fn max_id(&self) -> Option<u64> {
        self.samples.iter().map(|s| s.id).max()
    }

    pub fn max_token(&self) -> Option<u32> {
        self.samples
            .iter()
            .flat_map(|s| s.tokens.iter().copied())
            .max()
    }

    /// Per-domain share of samples.
    pub fn empirical_proportions(&self) -> Result<MixtureWeights> {
        if self.samples.is_empty() {
            return Err(Error::InvalidCorpus(
                "empty corpus has no proportions".into(),
            ));
        }
        let n = self.samples.len() as f64;
        MixtureWeights::new(
            self.domain_index
                .iter()
                .map(|ids| ids.len() as f64 / n)
                .collect(),
        )
    }

    pub fn samples_of_domain(&self, domain: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.domain == domain)
    }
}

/// A point on the probability simplex over domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    /// Accepts `weights` only if they are non-negative and sum to one within [`SIMPLEX_TOL`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(weights, SIMPLEX_TOL)
    }

    /// Looser check for values read from text, followed by renormalization so the
    /// stored vector meets the internal tolerance.
    pub fn from_config(weights: Vec<f64>) -> Result<Self> {
        let checked = Self::with_tolerance(weights, CONFIG_SIMPLEX_TOL)?;
        let sum: f64 = checked.0.iter().sum();
        if (sum - 1.0).abs() <= SIMPLEX_TOL {
            return Ok(checked);
        }
        Self::new(checked.0.iter().map(|w| w / sum).collect())
    }

    fn with_tolerance(weights: Vec<f64>, tol: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::BadSimplex("empty weight vector".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::BadSimplex(format!("entry {i} is {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::BadSimplex(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform mixture needs k >= 1");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        let mut w = vec![0.0; k];
        w[index] = 1.0;
        Self(w)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for MixtureWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixtureWeights> for Vec<f64> {
    fn from(w: MixtureWeights) -> Self {
        w.0
    }
}

/// When data-centric components fire, counted in optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_step: usize,
    pub update_step: usize,
    pub update_times: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_step: 0,
            update_step: 1,
            update_times: 0,
        }
    }
}

impl Schedule {
    pub fn new(warmup_step: usize, update_step: usize, update_times: usize) -> Result<Self> {
        let s = Self {
            warmup_step,
            update_step,
            update_times,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.update_times > 0 && self.update_step == 0 {
            return Err(Error::BadSchedule {
                update_step: self.update_step,
                update_times: self.update_times,
            });
        }
        Ok(())
    }

    /// `warmup_step + j * update_step` for `j` in `0..update_times`.
    pub fn invocation_steps(&self) -> Vec<usize> {
        (0..self.update_times)
            .map(|j| self.warmup_step + j * self.update_step)
            .collect()
    }

    pub fn fires_at(&self, step: usize) -> bool {
        if self.update_times == 0 || step < self.warmup_step {
            return false;
        }
        let offset = step - self.warmup_step;
        offset.is_multiple_of(self.update_step) && offset / self.update_step < self.update_times
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainType {
    Static,
    DynamicSelect,
    DynamicMix,
    DynamicWeight,
}

impl TrainType {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainType::Static => "static",
            TrainType::DynamicSelect => "dynamic_select",
            TrainType::DynamicMix => "dynamic_mix",
            TrainType::DynamicWeight => "dynamic_weight",
        }
    }
}

impl std::str::FromStr for TrainType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(TrainType::Static),
            "dynamic_select" => Ok(TrainType::DynamicSelect),
            "dynamic_mix" => Ok(TrainType::DynamicMix),
            "dynamic_weight" => Ok(TrainType::DynamicWeight),
            other => Err(Error::UnknownTrainType(other.to_string())),
        }
    }
}

impl fmt::Display for TrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape of the backend language model. The task is always next-token prediction
/// over the same vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Standard deviation multiplier for random initialization.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embed_dim: 16,
            hidden_dim: 32,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
        }
    }
}

/// A component parameter as written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
    Text(String),
    Numbers(Vec<f64>),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Number(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
            ParamValue::Numbers(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

/// String-keyed scalar parameters handed to component factories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams(BTreeMap<String, ParamValue>);

impl ComponentParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn with_f64(self, key: &str, value: f64) -> Self {
        self.with(key, ParamValue::Number(value))
    }

    pub fn with_str(self, key: &str, value: &str) -> Self {
        self.with(key, ParamValue::Text(value.to_string()))
    }

    pub fn with_bool(self, key: &str, value: bool) -> Self {
        self.with(key, ParamValue::Bool(value))
    }

    pub fn insert(&mut self, key: String, value: ParamValue) {
        self.0.insert(key, value);
    }

    pub fn remove(&mut self, key: &str) -> Option<ParamValue> {
        self.0.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.0.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(ParamValue::Number(x)) => Ok(*x),
            Some(other) => Err(Error::BadParams(format!(
                "`{key}` must be a number, got `{other}`"
            ))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(ParamValue::Number(x)) if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
            Some(other) => Err(Error::BadParams(format!(
                "`{key}` must be a non-negative integer, got `{other}`"
            ))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.0.get(key) {
            None => Ok(default),
            Some(ParamValue::Bool(b)) => Ok(*b),
            Some(other) => Err(Error::BadParams(format!(
                "`{key}` must be true or false, got `{other}`"
            ))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.0.get(key) {
            None => Ok(default),
            Some(ParamValue::Text(s)) => Ok(s),
            Some(other) => Err(Error::BadParams(format!(
                "`{key}` must be a string, got `{other}`"
            ))),
        }
    }

    pub fn numbers(&self, key: &str) -> Result<Option<&[f64]>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(ParamValue::Numbers(v)) => Ok(Some(v)),
            Some(other) => Err(Error::BadParams(format!(
                "`{key}` must be a list of numbers, got `{other}`"
            ))),
        }
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, component: &str, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::BadParams(format!(
                "`{k}` is not a parameter of `{component}` (accepted: {})",
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

/// Synthetic corpus description from the `data.generate` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub domains: Vec<String>,
    pub proportions: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    /// Indices of domains made of uniform noise tokens.
    #[serde(default)]
    pub noise: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub mode: ValidationMode,
    pub m: usize,
    pub seed: u64,
}

/// Where a run gets its training and validation data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub generate: Option<GenerateConfig>,
    pub validation_spec: Option<ValidationConfig>,
    /// Recorded per-domain loss vectors for model-free mixer simulation.
    pub loss_trace: Option<PathBuf>,
}

/// Fully parsed run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_type: TrainType,
    pub component_name: String,
    pub schedule: Schedule,
    pub init_mixture_proportions: Option<MixtureWeights>,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub component_params: ComponentParams,
    pub seed: u64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_type: TrainType::Static,
            component_name: String::new(),
            schedule: Schedule::default(),
            init_mixture_proportions: None,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            component_params: ComponentParams::default(),
            seed: 42,
            max_steps: 1000,
            eval_interval: 200,
            data: DataConfig::default(),
        }
    }
}

/// Checks a config against the corpus it will run on. Component names are
/// resolved later against the registry.
pub fn validate_config(cfg: &RunConfig, corpus: &Corpus) -> Result<()> {
    if cfg.train_type != TrainType::Static && cfg.component_name.trim().is_empty() {
        return Err(Error::config(
            "component_name",
            format!("required when train_type is {}", cfg.train_type),
        ));
    }
    cfg.schedule.validate()?;
    if let Some(init) = &cfg.init_mixture_proportions {
        let sum: f64 = init.as_slice().iter().sum();
        if (sum - 1.0).abs() > CONFIG_SIMPLEX_TOL {
            return Err(Error::BadSimplex(format!("weights sum to {sum}, not 1")));
        }
        if init.len() != corpus.num_domains() {
            return Err(Error::config(
                "init_mixture_proportions",
                format!(
                    "has {} entries but the corpus has {} domains",
                    init.len(),
                    corpus.num_domains()
                ),
            ));
        }
    }
    let m = &cfg.model;
    if m.vocab_size < 2 || m.embed_dim == 0 || m.hidden_dim == 0 {
        return Err(Error::config(
            "model",
            "vocab_size must be >= 2 and embed_dim, hidden_dim >= 1",
        ));
    }
    if !(m.init_scale.is_finite() && m.init_scale >= 0.0) {
        return Err(Error::config("model.init_scale", "must be finite and >= 0"));
    }
    if let Some(tok) = corpus.max_token() {
        if tok as usize >= m.vocab_size {
            return Err(Error::config(
                "model.vocab_size",
                format!("corpus uses token {tok} but vocab_size is {}", m.vocab_size),
            ));
        }
    }
    let o = &cfg.optim;
    if o.batch_size == 0 {
        return Err(Error::config("train.batch_size", "must be >= 1"));
    }
    if !(o.learning_rate.is_finite() && o.learning_rate >= 0.0) {
        return Err(Error::config(
            "train.learning_rate",
            "must be finite and >= 0",
        ));
    }
    if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
        return Err(Error::config("train.beta1/beta2", "must lie in [0, 1)"));
    }
    if !(o.eps > 0.0) {
        return Err(Error::config("train.eps", "must be > 0"));
    }
    if cfg.eval_interval == 0 {
        return Err(Error::config("train.eval_interval", "must be >= 1"));
    }
    Ok(())
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub train_loss: f64,
    /// Mean per-token cross-entropy per domain; `None` when the validation set
    /// has no samples of that domain.
    pub per_domain_val_loss: Vec<Option<f64>>,
    pub per_domain_tokens: Vec<u64>,
    pub overall_val_loss: f64,
    pub mixture: MixtureWeights,
    pub active_selection_digest: u64,
}

impl MetricsRecord {
    /// Token-weighted mean of the per-domain losses.
    pub fn token_weighted_overall(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (loss, &tokens) in self.per_domain_val_loss.iter().zip(&self.per_domain_tokens) {
            if let Some(l) = loss {
                num += l * tokens as f64;
                den += tokens as f64;
            }
        }
        if den == 0.0 {
            f64::NAN
        } else {
            num / den
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self
            .per_domain_val_loss
            .iter()
            .flatten()
            .any(|l| !l.is_finite())
        {
            return Err(Error::NonFinite(format!(
                "per-domain loss at step {}",
                self.step
            )));
        }
        let recomputed = self.token_weighted_overall();
        if !((recomputed - self.overall_val_loss).abs() <= 1e-9) {
            return Err(Error::NonFinite(format!(
                "overall loss {} disagrees with token-weighted mean {} at step {}",
                self.overall_val_loss, recomputed, self.step
            )));
        }
        Ok(())
    }
}
