//! Offline mixture search: reference model, proxy model with exponentiated
//! gradient ascent on excess loss, then a static mixture for the target run.

use serde::{Deserialize, Serialize};

use super::{MixObservation, Mixer, ReferencePlan, StaticMixer, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::model::{Arch, ModelState};
use crate::trainers::{initial_mixture, train_loop, Driver, LoopSetup, RunOutput};
use crate::types::{ComponentParams, Corpus, MixtureWeights, RunConfig, Sample, Schedule};

const REFERENCE_STREAM: u64 = 0x7265_6600;
const PROXY_STREAM: u64 = 0x7072_6f78;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoremiParams {
    pub eta: f64,
    pub epsilon: f64,
}

impl Default for DoremiParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            epsilon: 0.01,
        }
    }
}

impl DoremiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::BadParams(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::BadParams(format!(
                "epsilon must be in [0,1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `max(0, proxy − reference)` per domain.
pub fn excess_loss(proxy: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    Ok(signed_excess_loss(proxy, reference)?
        .into_iter()
        .map(|x| x.max(0.0))
        .collect())
}

/// `proxy − reference` per domain, without clipping.
pub fn signed_excess_loss(proxy: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if proxy.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: proxy.len(),
            got: reference.len(),
        });
    }
    Ok(proxy.iter().zip(reference).map(|(p, r)| p - r).collect())
}

/// Sum that does not depend on the order of `xs`.
fn order_free_sum(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// `u = α·exp(ηλ)`, normalized, then smoothed toward uniform by `ε`.
pub fn doremi_update(
    alpha: &MixtureWeights,
    lambda: &[f64],
    p: &DoremiParams,
) -> Result<MixtureWeights> {
    let k = alpha.len();
    if lambda.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            got: lambda.len(),
        });
    }
    p.validate()?;
    if let Some(i) = lambda.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("excess loss for domain {i}")));
    }
    // shifting the exponent by its maximum leaves the normalized result unchanged
    let shift = lambda
        .iter()
        .map(|l| p.eta * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let u: Vec<f64> = alpha
        .as_slice()
        .iter()
        .zip(lambda)
        .map(|(a, l)| a * (p.eta * l - shift).exp())
        .collect();
    let total = order_free_sum(&u);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite("doremi normalizer".into()));
    }
    let kf = k as f64;
    MixtureWeights::new(
        u.iter()
            .map(|x| (1.0 - p.epsilon) * (x / total) + p.epsilon / kf)
            .collect(),
    )
}

/// Token-weighted mean loss per domain over `samples`; `None` for absent domains.
fn domain_losses(model: &ModelState, samples: &[&Sample], k: usize) -> Result<Vec<Option<f64>>> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for s in samples {
        let (sum, n) = model.token_loss_sum(s)?;
        sums[s.domain] += sum;
        counts[s.domain] += n;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect())
}

/// The `doremi` mixer: Step 2 of the pipeline, run on a proxy model.
#[derive(Debug)]
pub struct DoremiMixer {
    pub params: DoremiParams,
    pub clip_excess: bool,
    pub average: bool,
    plan: ReferencePlan,
    reference: Option<ModelState>,
    alpha: Option<MixtureWeights>,
    sum_alpha: Vec<f64>,
    updates: usize,
}

impl DoremiMixer {
    pub fn new(params: DoremiParams, plan: ReferencePlan) -> Self {
        Self {
            params,
            clip_excess: true,
            average: false,
            plan,
            reference: None,
            alpha: None,
            sum_alpha: Vec::new(),
            updates: 0,
        }
    }

    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown(
            "doremi",
            &[
                "eta",
                "epsilon",
                "clip_excess",
                "average",
                "hidden_dim",
                "reference_steps",
                "proxy_steps",
                "precomputed_weights",
            ],
        )?;
        let p = DoremiParams {
            eta: params.f64_or("eta", 0.1)?,
            epsilon: params.f64_or("epsilon", 0.01)?,
        };
        p.validate()?;
        let opt_usize = |key: &str| -> Result<Option<usize>> {
            match params.get(key) {
                None => Ok(None),
                Some(_) => params.usize_or(key, 0).map(Some),
            }
        };
        let hidden_dim = opt_usize("hidden_dim")?;
        if hidden_dim == Some(0) {
            return Err(Error::BadParams("hidden_dim must be >= 1".into()));
        }
        let precomputed = params
            .numbers("precomputed_weights")?
            .map(|w| MixtureWeights::from_config(w.to_vec()))
            .transpose()?;
        let plan = ReferencePlan {
            hidden_dim,
            reference_steps: opt_usize("reference_steps")?,
            proxy_steps: opt_usize("proxy_steps")?,
            precomputed,
        };
        let mut m = Self::new(p, plan);
        m.clip_excess = params.bool_or("clip_excess", true)?;
        m.average = params.bool_or("average", false)?;
        Ok(m)
    }

    fn alpha(&self) -> &MixtureWeights {
        self.alpha
            .as_ref()
            .expect("doremi mixer used before initialize")
    }
}

impl Mixer for DoremiMixer {
    fn name(&self) -> &str {
        "doremi"
    }

    fn initialize(&mut self, init: &MixtureWeights) -> Result<()> {
        self.alpha = Some(init.clone());
        self.sum_alpha = vec![0.0; init.len()];
        self.updates = 0;
        Ok(())
    }

    fn policy(&self) -> &MixtureWeights {
        self.alpha()
    }

    fn update(&mut self, obs: &MixObservation<'_>) -> Result<TrajectoryRecord> {
        let reference = self.reference.as_ref().ok_or_else(|| {
            Error::BadParams("doremi needs a reference model before updating".into())
        })?;
        let k = self.alpha().len();
        let proxy = domain_losses(obs.model, obs.window, k)?;
        let refl = domain_losses(reference, obs.window, k)?;
        let signal: Vec<Option<f64>> = proxy
            .iter()
            .zip(&refl)
            .map(|(p, r)| match (p, r) {
                (Some(p), Some(r)) => {
                    let x = p - r;
                    Some(if self.clip_excess { x.max(0.0) } else { x })
                }
                _ => None,
            })
            .collect();
        let lambda: Vec<f64> = signal.iter().map(|s| s.unwrap_or(0.0)).collect();
        let next = doremi_update(self.alpha(), &lambda, &self.params)?;
        for (acc, a) in self.sum_alpha.iter_mut().zip(next.as_slice()) {
            *acc += a;
        }
        self.updates += 1;
        self.alpha = Some(next);
        Ok(TrajectoryRecord {
            step: obs.step,
            weights: self.alpha().as_slice().to_vec(),
            signal,
        })
    }

    fn describe(&self) -> String {
        format!(
            "doremi(eta={}, epsilon={}, clip_excess={}, average={})",
            self.params.eta, self.params.epsilon, self.clip_excess, self.average
        )
    }

    fn reference_plan(&self) -> Option<ReferencePlan> {
        Some(self.plan.clone())
    }

    fn attach_reference(&mut self, reference: ModelState) -> Result<()> {
        self.reference = Some(reference);
        Ok(())
    }

    fn final_weights(&self) -> MixtureWeights {
        if self.average && self.updates > 0 {
            let n = self.updates as f64;
            let mean: Vec<f64> = self.sum_alpha.iter().map(|s| s / n).collect();
            let total: f64 = mean.iter().sum();
            MixtureWeights::new(mean.iter().map(|x| x / total).collect())
                .expect("mean of simplex points")
        } else {
            self.alpha().clone()
        }
    }
}

/// Everything the three steps produced.
#[derive(Debug)]
pub struct DoremiOutcome {
    pub weights: MixtureWeights,
    pub trajectory: Vec<TrajectoryRecord>,
    pub invocations: Vec<usize>,
    pub reference: Option<RunOutput>,
    pub proxy: Option<RunOutput>,
}

/// Steps 1 and 2, using the `doremi` component parameters from `cfg`.
pub fn run_doremi_pipeline(
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
) -> Result<DoremiOutcome> {
    let mut mixer = DoremiMixer::from_params(&cfg.component_params)?;
    run_pipeline_with(&mut mixer, cfg, corpus, val)
}

pub(crate) fn run_pipeline_with(
    mixer: &mut dyn Mixer,
    cfg: &RunConfig,
    corpus: &Corpus,
    val: &Corpus,
) -> Result<DoremiOutcome> {
    let plan = mixer.reference_plan().ok_or_else(|| {
        Error::BadParams(format!(
            "mixer `{}` has no reference pipeline",
            mixer.name()
        ))
    })?;
    if let Some(weights) = plan.precomputed {
        if weights.len() != corpus.num_domains() {
            return Err(Error::LengthMismatch {
                expected: corpus.num_domains(),
                got: weights.len(),
            });
        }
        return Ok(DoremiOutcome {
            weights,
            trajectory: Vec::new(),
            invocations: Vec::new(),
            reference: None,
            proxy: None,
        });
    }
    let full = Arch::from(&cfg.model);
    let hidden = plan.hidden_dim.unwrap_or((full.hidden_dim / 2).max(1));
    let arch = Arch::new(full.vocab_size, full.embed_dim, hidden);

    let mut reference_mixer = StaticMixer::default();
    let reference = train_loop(
        &LoopSetup {
            cfg,
            arch,
            max_steps: plan.reference_steps.unwrap_or(cfg.max_steps),
            stream: REFERENCE_STREAM,
            schedule: Schedule::default(),
            init_policy: initial_mixture(cfg, corpus)?,
        },
        corpus,
        val,
        Driver::Mix(&mut reference_mixer),
    )?;

    mixer.attach_reference(reference.model.clone())?;
    let proxy = train_loop(
        &LoopSetup {
            cfg,
            arch,
            max_steps: plan.proxy_steps.unwrap_or(cfg.max_steps),
            stream: PROXY_STREAM,
            schedule: cfg.schedule,
            init_policy: MixtureWeights::uniform(corpus.num_domains()),
        },
        corpus,
        val,
        Driver::Mix(&mut *mixer),
    )?;
    Ok(DoremiOutcome {
        weights: mixer.final_weights(),
        trajectory: proxy.trajectory.clone(),
        invocations: proxy.invocations.clone(),
        reference: Some(reference),
        proxy: Some(proxy),
    })
}
