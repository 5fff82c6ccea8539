//! Training loops for the static baseline and the three dynamic modes.
//!
//! All four share one loop. Batches are drawn by picking a domain from the
//! current policy and then a sample uniformly inside it, so a run whose
//! component never changes anything reproduces the static baseline bit for bit.

mod registry;

pub use registry::{
    register_builtins, Component, ComponentKind, ComponentRegistry, Factory, MixerFactory,
    SelectorFactory, WeighterFactory,
};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::io::eval_per_domain;
use crate::mixers::{
    run_pipeline_with, DomainPools, MixObservation, Mixer, StaticMixer, TrajectoryRecord,
};
use crate::model::{digest_bytes, snapshot, train_step, Arch, ModelState, OptimizerState};
use crate::selectors::{select, ScoreVector, SelectionContext, Selector};
use crate::types::{
    validate_config, Corpus, MetricsRecord, MixtureWeights, RunConfig, Sample, Schedule, TrainType,
};
use crate::weighters::{weight_summary, Weighter};

const MODEL_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

/// The active subset after a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub step: usize,
    pub ids: Vec<u64>,
    pub digest: u64,
}

/// Per-step summary of the weights a weighter produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub step: usize,
    pub min: f64,
    pub max: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: ModelState,
    pub optimizer: OptimizerState,
    pub metrics: Vec<MetricsRecord>,
    pub trajectory: Vec<TrajectoryRecord>,
    /// Steps at which the component was invoked.
    pub invocations: Vec<usize>,
    pub selections: Vec<SelectionEvent>,
    pub weight_stats: Vec<WeightStats>,
    pub log: Vec<String>,
}

impl RunOutput {
    pub fn final_metrics(&self) -> Option<&MetricsRecord> {
        self.metrics.last()
    }
}

pub(crate) struct SelectDriver {
    pub selector: Box<dyn Selector>,
    pub ratio: f64,
    pub accumulate: bool,
}

pub(crate) enum Driver<'a> {
    Select(SelectDriver),
    Mix(&'a mut dyn Mixer),
    Weight(&'a dyn Weighter),
}

pub(crate) struct LoopSetup<'a> {
    pub cfg: &'a RunConfig,
    pub arch: Arch,
    pub max_steps: usize,
    /// Salt separating the random streams of auxiliary runs from the main one.
    pub stream: u64,
    pub schedule: Schedule,
    pub init_policy: MixtureWeights,
}

/// `init_mixture_proportions` when given, else the corpus proportions.
pub fn initial_mixture(cfg: &RunConfig, corpus: &Corpus) -> Result<MixtureWeights> {
    match &cfg.init_mixture_proportions {
        Some(w) if w.len() != corpus.num_domains() => Err(Error::LengthMismatch {
            expected: corpus.num_domains(),
            got: w.len(),
        }),
        Some(w) => Ok(w.clone()),
        None => DomainPools::from_corpus(corpus).proportions(),
    }
}

/// Digest of an id set; zero stands for "every sample".
pub fn selection_digest(ids: &[u64], pool_size: usize) -> u64 {
    if ids.len() == pool_size {
        return 0;
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let bytes: Vec<u8> = sorted.iter().flat_map(|id| id.to_le_bytes()).collect();
    digest_bytes(&bytes)
}

/// Runs `f` and fails if the model or optimizer changed underneath it.
fn guarded<T>(
    what: &str,
    model: &ModelState,
    opt: &OptimizerState,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let before = snapshot(model, opt).digest();
    let out = f()?;
    if snapshot(model, opt).digest() != before {
        return Err(Error::ComponentMutatedModel(what.to_string()));
    }
    Ok(out)
}

fn domain_means(sums: &[f64], counts: &[usize]) -> Vec<Option<f64>> {
    sums.iter()
        .zip(counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect()
}

pub(crate) fn train_loop(
    setup: &LoopSetup<'_>,
    corpus: &Corpus,
    val: &Corpus,
    mut driver: Driver<'_>,
) -> Result<RunOutput> {
    let cfg = setup.cfg;
    let k = corpus.num_domains();
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if val.num_domains() != k {
        return Err(Error::InvalidCorpus(format!(
            "validation set has {} domains, corpus has {k}",
            val.num_domains()
        )));
    }
    let base = derive_seed(cfg.seed, setup.stream);
    let mut model = ModelState::init(
        setup.arch,
        cfg.model.init_scale,
        derive_seed(base, MODEL_STREAM),
    );
    let mut opt = OptimizerState::from_config(&cfg.optim, model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, BATCH_STREAM));

    let mut pools = DomainPools::from_corpus(corpus);
    let mut active: Option<Vec<u64>> = None;
    let mut log = Vec::new();
    let mut policy = match &mut driver {
        Driver::Select(d) => {
            d.selector.begin(&model, &opt)?;
            log.push(format!("selector {}", d.selector.describe()));
            pools.proportions()?
        }
        Driver::Mix(m) => {
            m.initialize(&setup.init_policy)?;
            log.push(format!("mixer {}", m.describe()));
            m.policy().clone()
        }
        Driver::Weight(w) => {
            log.push(format!("weighter {} {:?}", w.name(), w.strategy()));
            setup.init_policy.clone()
        }
    };
    let mut digest = 0u64;

    let mut metrics = Vec::new();
    let mut trajectory = Vec::new();
    let mut invocations = Vec::new();
    let mut selections = Vec::new();
    let mut weight_stats = Vec::new();

    let mut train_sum = 0.0;
    let mut train_count = 0usize;
    let mut window: Vec<&Sample> = Vec::new();
    let mut window_sums = vec![0.0; k];
    let mut window_counts = vec![0usize; k];
    let mut last_losses = vec![None; k];

    for step in 0..=setup.max_steps {
        let fires = setup.schedule.fires_at(step);
        match &mut driver {
            Driver::Select(d) if fires => {
                let sv = guarded("selector", &model, &opt, || {
                    d.selector.score(&SelectionContext {
                        model: &model,
                        opt: &opt,
                        pool: corpus.samples(),
                        val: val.samples(),
                        step,
                        seed: cfg.seed,
                    })
                })?;
                let n = ((d.ratio * corpus.len() as f64).round() as usize).clamp(1, corpus.len());
                let mut ids = select(&sv, n)?;
                if d.accumulate {
                    if let Some(prev) = &active {
                        let union: BTreeSet<u64> = prev.iter().chain(&ids).copied().collect();
                        ids = union.into_iter().collect();
                    }
                }
                pools = DomainPools::from_ids(corpus, &ids)?;
                policy = pools.proportions()?;
                digest = selection_digest(&ids, corpus.len());
                selections.push(SelectionEvent {
                    step,
                    ids: ids.clone(),
                    digest,
                });
                active = Some(ids);
                invocations.push(step);
            }
            Driver::Mix(m) if fires => {
                let window_losses = domain_means(&window_sums, &window_counts);
                let record = guarded("mixer", &model, &opt, || {
                    m.update(&MixObservation {
                        step,
                        seed: cfg.seed,
                        model: &model,
                        window_losses: &window_losses,
                        last_batch_losses: &last_losses,
                        window: &window,
                    })
                })?;
                trajectory.push(record);
                policy = m.policy().clone();
                window.clear();
                window_sums.iter_mut().for_each(|x| *x = 0.0);
                window_counts.iter_mut().for_each(|x| *x = 0);
                invocations.push(step);
            }
            _ => {}
        }
        if step == setup.max_steps {
            break;
        }

        let batch = pools.sample(&policy, cfg.optim.batch_size, &mut rng)?;
        let weights = match &driver {
            Driver::Weight(w) if step >= setup.schedule.warmup_step => {
                let losses = batch
                    .iter()
                    .map(|s| model.per_sample_loss(s))
                    .collect::<Result<Vec<_>>>()?;
                let weights = w.weights(&losses)?;
                let (min, max, entropy) = weight_summary(&weights);
                weight_stats.push(WeightStats {
                    step,
                    min,
                    max,
                    entropy,
                });
                invocations.push(step);
                weights
            }
            _ => vec![1.0; batch.len()],
        };
        let outcome = train_step(&mut model, &mut opt, &batch, &weights)?;
        for l in &outcome.per_sample_losses {
            train_sum += l;
        }
        train_count += outcome.per_sample_losses.len();

        if let Driver::Mix(_) = driver {
            let mut batch_sums = vec![0.0; k];
            let mut batch_counts = vec![0usize; k];
            for (s, l) in batch.iter().zip(&outcome.per_sample_losses) {
                batch_sums[s.domain] += l;
                batch_counts[s.domain] += 1;
                window_sums[s.domain] += l;
                window_counts[s.domain] += 1;
            }
            last_losses = domain_means(&batch_sums, &batch_counts);
            window.extend_from_slice(&batch);
        }

        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == setup.max_steps {
            let ev = eval_per_domain(&model, val)?;
            if !ev.overall.is_finite() {
                return Err(Error::NonFinite(format!("validation loss at step {done}")));
            }
            metrics.push(MetricsRecord {
                step: done,
                train_loss: train_sum / train_count as f64,
                per_domain_val_loss: ev.per_domain,
                per_domain_tokens: ev.tokens,
                overall_val_loss: ev.overall,
                mixture: policy.clone(),
                active_selection_digest: digest,
            });
            train_sum = 0.0;
            train_count = 0;
        }
    }

    Ok(RunOutput {
        model,
        optimizer: opt,
        metrics,
        trajectory,
        invocations,
        selections,
        weight_stats,
        log,
    })
}

fn main_setup<'a>(
    cfg: &'a RunConfig,
    schedule: Schedule,
    init_policy: MixtureWeights,
) -> LoopSetup<'a> {
    LoopSetup {
        cfg,
        arch: Arch::from(&cfg.model),
        max_steps: cfg.max_steps,
        stream: 0,
        schedule,
        init_policy,
    }
}

/// Fixed mixture, no component.
pub fn run_static(cfg: &RunConfig, corpus: &Corpus, val: &Corpus) -> Result<RunOutput> {
    validate_config(cfg, corpus)?;
    let mut mixer = StaticMixer::default();
    train_loop(
        &main_setup(cfg, Schedule::default(), initial_mixture(cfg, corpus)?),
        corpus,
        val,
        Driver::Mix(&mut mixer),
    )
}

/// Trainer-level keys of `component_params` for the select mode.
const SELECT_KEYS: [&str; 2] = ["ratio", "accumulate"];

pub fn run_select(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
    registry: &ComponentRegistry,
) -> Result<RunOutput> {
    validate_config(cfg, corpus)?;
    let mut params = cfg.component_params.clone();
    let own = cfg.component_params.clone();
    for key in SELECT_KEYS {
        params.remove(key);
    }
    let ratio = own.f64_or("ratio", 0.5)?;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::BadParams(format!(
            "ratio must be in (0, 1], got {ratio}"
        )));
    }
    let accumulate = own.bool_or("accumulate", false)?;
    let selector = registry.resolve_selector(&cfg.component_name, &params)?;
    train_loop(
        &main_setup(cfg, cfg.schedule, initial_mixture(cfg, corpus)?),
        corpus,
        val,
        Driver::Select(SelectDriver {
            selector,
            ratio,
            accumulate,
        }),
    )
}

pub fn run_mix(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
    registry: &ComponentRegistry,
) -> Result<RunOutput> {
    validate_config(cfg, corpus)?;
    let mut mixer = registry.resolve_mixer(&cfg.component_name, &cfg.component_params)?;
    if mixer.reference_plan().is_some() {
        let outcome = run_pipeline_with(&mut *mixer, cfg, corpus, val)?;
        let mut target = StaticMixer::default();
        let mut out = train_loop(
            &main_setup(cfg, Schedule::default(), outcome.weights.clone()),
            corpus,
            val,
            Driver::Mix(&mut target),
        )?;
        out.log.insert(0, format!("mixer {}", mixer.describe()));
        out.log
            .push(format!("target mixture {:?}", outcome.weights.as_slice()));
        out.trajectory = outcome.trajectory;
        out.invocations = outcome.invocations;
        return Ok(out);
    }
    train_loop(
        &main_setup(cfg, cfg.schedule, initial_mixture(cfg, corpus)?),
        corpus,
        val,
        Driver::Mix(&mut *mixer),
    )
}

pub fn run_weight(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
    registry: &ComponentRegistry,
) -> Result<RunOutput> {
    validate_config(cfg, corpus)?;
    let weighter = registry.resolve_weighter(&cfg.component_name, &cfg.component_params)?;
    train_loop(
        &main_setup(cfg, cfg.schedule, initial_mixture(cfg, corpus)?),
        corpus,
        val,
        Driver::Weight(&*weighter),
    )
}

/// Trains statically up to the first selection step, then scores the whole
/// pool with the configured selector. The scores match what a select run
/// computes at its first invocation.
pub fn score_pool(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
    registry: &ComponentRegistry,
) -> Result<ScoreVector> {
    validate_config(cfg, corpus)?;
    let mut params = cfg.component_params.clone();
    for key in SELECT_KEYS {
        params.remove(key);
    }
    let mut selector = registry.resolve_selector(&cfg.component_name, &params)?;
    let mut setup = main_setup(
        cfg,
        Schedule::default(),
        DomainPools::from_corpus(corpus).proportions()?,
    );
    setup.max_steps = cfg.schedule.warmup_step;
    let arch = setup.arch;
    let init = ModelState::init(
        arch,
        cfg.model.init_scale,
        derive_seed(derive_seed(cfg.seed, 0), MODEL_STREAM),
    );
    selector.begin(
        &init,
        &OptimizerState::from_config(&cfg.optim, init.num_params()),
    )?;
    let mut mixer = StaticMixer::default();
    let out = train_loop(&setup, corpus, val, Driver::Mix(&mut mixer))?;
    let (model, opt) = (&out.model, &out.optimizer);
    guarded("selector", model, opt, || {
        selector.score(&SelectionContext {
            model,
            opt,
            pool: corpus.samples(),
            val: val.samples(),
            step: cfg.schedule.warmup_step,
            seed: cfg.seed,
        })
    })
}

/// Dispatches on `cfg.train_type`.
pub fn run(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
    registry: &ComponentRegistry,
) -> Result<RunOutput> {
    match cfg.train_type {
        TrainType::Static => run_static(cfg, corpus, val),
        TrainType::DynamicSelect => run_select(cfg, corpus, val, registry),
        TrainType::DynamicMix => run_mix(cfg, corpus, val, registry),
        TrainType::DynamicWeight => run_weight(cfg, corpus, val, registry),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, make_validation, DomainSpec, ValidationMode};
    use crate::io::metrics_digest;
    use crate::types::{ComponentParams, ModelConfig};

    fn data() -> (Corpus, Corpus) {
        let specs: Vec<DomainSpec> = (0..2)
            .map(|i| DomainSpec::preset(&format!("d{i}"), i, 2, 32, 5))
            .collect();
        let c = generate_corpus(
            &specs,
            &MixtureWeights::new(vec![0.6, 0.4]).unwrap(),
            120,
            1,
        )
        .unwrap();
        let v = make_validation(&specs, &c, &ValidationMode::InDistribution, 40, 2).unwrap();
        (c, v)
    }

    fn cfg() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                vocab_size: 32,
                embed_dim: 4,
                hidden_dim: 6,
                init_scale: 1.0,
            },
            max_steps: 30,
            eval_interval: 10,
            schedule: Schedule::new(5, 10, 2).unwrap(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn static_run_records_every_interval() {
        let (c, v) = data();
        let out = run_static(&cfg(), &c, &v).unwrap();
        let steps: Vec<usize> = out.metrics.iter().map(|m| m.step).collect();
        assert_eq!(steps, vec![10, 20, 30]);
        assert!(out.invocations.is_empty());
        for m in &out.metrics {
            m.check_invariants().unwrap();
        }
    }

    #[test]
    fn invocations_follow_schedule_up_to_max_steps() {
        let (c, v) = data();
        let r = ComponentRegistry::with_builtins();
        let mut cfg = cfg();
        cfg.train_type = TrainType::DynamicMix;
        cfg.component_name = "odm".into();
        cfg.schedule = Schedule::new(10, 10, 5).unwrap();
        let out = run_mix(&cfg, &c, &v, &r).unwrap();
        assert_eq!(out.invocations, vec![10, 20, 30]);
        assert_eq!(out.trajectory.len(), 3);
    }

    #[test]
    fn runs_are_reproducible() {
        let (c, v) = data();
        let r = ComponentRegistry::with_builtins();
        let mut cfg = cfg();
        cfg.train_type = TrainType::DynamicSelect;
        cfg.component_name = "random".into();
        cfg.component_params = ComponentParams::new().with_f64("ratio", 0.3);
        let a = run_select(&cfg, &c, &v, &r).unwrap();
        let b = run_select(&cfg, &c, &v, &r).unwrap();
        assert_eq!(metrics_digest(&a.metrics), metrics_digest(&b.metrics));
        assert_eq!(a.selections, b.selections);
        assert_ne!(a.selections[0].digest, 0);
        assert_eq!(a.selections[0].ids.len(), 36);
    }

    #[test]
    fn select_all_matches_baseline() {
        let (c, v) = data();
        let r = ComponentRegistry::with_builtins();
        let base = run_static(&cfg(), &c, &v).unwrap();
        let mut cfg = cfg();
        cfg.train_type = TrainType::DynamicSelect;
        cfg.component_name = "loss".into();
        cfg.component_params = ComponentParams::new().with_f64("ratio", 1.0);
        let sel = run_select(&cfg, &c, &v, &r).unwrap();
        assert_eq!(metrics_digest(&base.metrics), metrics_digest(&sel.metrics));
        assert_eq!(sel.invocations, vec![5, 15]);
    }

    #[test]
    fn accumulate_grows_the_subset() {
        let (c, v) = data();
        let r = ComponentRegistry::with_builtins();
        let mut cfg = cfg();
        cfg.train_type = TrainType::DynamicSelect;
        cfg.component_name = "random".into();
        cfg.component_params = ComponentParams::new()
            .with_f64("ratio", 0.2)
            .with_bool("accumulate", true);
        let out = run_select(&cfg, &c, &v, &r).unwrap();
        assert_eq!(out.selections[0].ids.len(), 24);
        assert!(out.selections[1].ids.len() > 24);
    }

    #[test]
    fn weight_warmup_covering_run_is_baseline() {
        let (c, v) = data();
        let r = ComponentRegistry::with_builtins();
        let base = run_static(&cfg(), &c, &v).unwrap();
        let mut cfg = cfg();
        cfg.train_type = TrainType::DynamicWeight;
        cfg.component_name = "loss".into();
        cfg.schedule = Schedule::new(30, 1, 0).unwrap();
        let out = run_weight(&cfg, &c, &v, &r).unwrap();
        assert_eq!(metrics_digest(&base.metrics), metrics_digest(&out.metrics));
        assert!(out.weight_stats.is_empty());
    }

    #[test]
    fn selection_digest_zero_for_full_pool() {
        assert_eq!(selection_digest(&[2, 0, 1], 3), 0);
        assert_eq!(selection_digest(&[2, 0], 3), selection_digest(&[0, 2], 3));
        assert_ne!(selection_digest(&[2, 0], 3), selection_digest(&[1, 0], 3));
    }
}
