//! Online mixing as an Exp3 bandit over domains.

use serde::{Deserialize, Serialize};

use super::{MixObservation, Mixer, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::types::{ComponentParams, MixtureWeights};

/// Raw weights are rescaled once they exceed this, which leaves the policy
/// unchanged and keeps them finite.
const RESCALE_AT: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmParams {
    pub ema_decay: f64,
    pub reward_scale: f64,
    pub eps_min: f64,
    pub clip_threshold: f64,
}

impl Default for OdmParams {
    fn default() -> Self {
        Self {
            ema_decay: 0.9,
            reward_scale: 15.0,
            eps_min: 0.01,
            clip_threshold: -10.0,
        }
    }
}

impl OdmParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::BadParams(format!(
                "ema_decay must be in [0,1), got {}",
                self.ema_decay
            )));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::BadParams(format!(
                "reward_scale must be > 0, got {}",
                self.reward_scale
            )));
        }
        if !(self.eps_min > 0.0) || k as f64 * self.eps_min > 1.0 {
            return Err(Error::BadParams(format!(
                "eps_min must be in (0, 1/K] for K={k}, got {}",
                self.eps_min
            )));
        }
        if !self.clip_threshold.is_finite() {
            return Err(Error::BadParams("clip_threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmState {
    pub raw_weights: Vec<f64>,
    /// `None` until the domain is first observed.
    pub ema_loss: Vec<Option<f64>>,
    pub policy: MixtureWeights,
    pub updates_done: usize,
}

impl OdmState {
    /// Starts from `init`; the raw weights are `K·init`, so uniform init gives all ones.
    pub fn new(init: &MixtureWeights) -> Result<Self> {
        let k = init.len() as f64;
        if init.as_slice().iter().any(|&p| p <= 0.0) {
            return Err(Error::BadParams(
                "odm needs a strictly positive initial mixture".into(),
            ));
        }
        Ok(Self {
            raw_weights: init.as_slice().iter().map(|p| p * k).collect(),
            ema_loss: vec![None; init.len()],
            policy: init.clone(),
            updates_done: 0,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.raw_weights.len()
    }
}

/// Rewards `max(L̂, clip) / scale` for domains with an EMA, `None` otherwise.
pub fn odm_rewards(state: &OdmState, p: &OdmParams) -> Vec<Option<f64>> {
    state
        .ema_loss
        .iter()
        .map(|l| l.map(|l| l.max(p.clip_threshold) / p.reward_scale))
        .collect()
}

/// One Exp3 update from the losses observed since the previous update.
/// Unobserved domains (`None`) keep their EMA and raw weight.
pub fn odm_update(state: &OdmState, observed: &[Option<f64>], p: &OdmParams) -> Result<OdmState> {
    let k = state.num_domains();
    if observed.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            got: observed.len(),
        });
    }
    p.validate(k)?;
    if let Some(i) = observed
        .iter()
        .position(|l| matches!(l, Some(x) if !x.is_finite()))
    {
        return Err(Error::NonFinite(format!("observed loss for domain {i}")));
    }
    let mut next = state.clone();
    for (ema, obs) in next.ema_loss.iter_mut().zip(observed) {
        if let Some(l) = *obs {
            *ema = Some(match *ema {
                Some(prev) => p.ema_decay * prev + (1.0 - p.ema_decay) * l,
                None => l,
            });
        }
    }
    let rewards = odm_rewards(&next, p);
    let kf = k as f64;
    for i in 0..k {
        if observed[i].is_some() {
            let r = rewards[i].expect("observed domains have an EMA");
            let estimate = r / state.policy.as_slice()[i];
            next.raw_weights[i] *= (p.eps_min * estimate / kf).exp();
        }
    }
    if next.raw_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("odm raw weights".into()));
    }
    let max = next.raw_weights.iter().copied().fold(0.0, f64::max);
    if max > RESCALE_AT {
        next.raw_weights.iter_mut().for_each(|w| *w /= max);
    }
    let total: f64 = next.raw_weights.iter().sum();
    let gamma = kf * p.eps_min;
    let policy = next
        .raw_weights
        .iter()
        .map(|w| (1.0 - gamma) * w / total + p.eps_min)
        .collect();
    next.policy = MixtureWeights::new(policy)?;
    next.updates_done += 1;
    Ok(next)
}

/// The `odm` mixer. By default it consumes the mean per-domain training loss
/// over the whole window since the previous update; `per_batch` restricts it
/// to the most recent batch.
#[derive(Debug)]
pub struct OdmMixer {
    pub params: OdmParams,
    pub per_batch: bool,
    state: Option<OdmState>,
}

impl OdmMixer {
    pub fn new(params: OdmParams, per_batch: bool) -> Self {
        Self {
            params,
            per_batch,
            state: None,
        }
    }

    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown(
            "odm",
            &[
                "ema_decay",
                "alpha",
                "reward_scale",
                "eps_min",
                "clip_threshold",
                "per_batch",
            ],
        )?;
        let d = OdmParams::default();
        let ema_decay = match params.get("alpha") {
            Some(_) => params.f64_or("alpha", d.ema_decay)?,
            None => params.f64_or("ema_decay", d.ema_decay)?,
        };
        let p = OdmParams {
            ema_decay,
            reward_scale: params.f64_or("reward_scale", d.reward_scale)?,
            eps_min: params.f64_or("eps_min", d.eps_min)?,
            clip_threshold: params.f64_or("clip_threshold", d.clip_threshold)?,
        };
        Ok(Self::new(p, params.bool_or("per_batch", false)?))
    }

    pub fn state(&self) -> Option<&OdmState> {
        self.state.as_ref()
    }
}

impl Mixer for OdmMixer {
    fn name(&self) -> &str {
        "odm"
    }

    fn initialize(&mut self, init: &MixtureWeights) -> Result<()> {
        self.params.validate(init.len())?;
        self.state = Some(OdmState::new(init)?);
        Ok(())
    }

    fn policy(&self) -> &MixtureWeights {
        &self
            .state
            .as_ref()
            .expect("odm mixer used before initialize")
            .policy
    }

    fn update(&mut self, obs: &MixObservation<'_>) -> Result<TrajectoryRecord> {
        let state = self
            .state
            .as_ref()
            .expect("odm mixer used before initialize");
        let losses = if self.per_batch {
            obs.last_batch_losses
        } else {
            obs.window_losses
        };
        let next = odm_update(state, losses, &self.params)?;
        let signal = odm_rewards(&next, &self.params);
        let record = TrajectoryRecord {
            step: obs.step,
            weights: next.policy.clone().into_vec(),
            signal,
        };
        self.state = Some(next);
        Ok(record)
    }

    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "odm(ema_decay={}, reward_scale={}, eps_min={}, clip_threshold={}, per_batch={})",
            p.ema_decay, p.reward_scale, p.eps_min, p.clip_threshold, self.per_batch
        )
    }
}
