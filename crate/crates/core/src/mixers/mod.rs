//! Domain-level mixture policies.

mod doremi;
mod odm;
mod sampler;
mod sim;

pub(crate) use doremi::run_pipeline_with;
pub use doremi::{
    doremi_update, excess_loss, run_doremi_pipeline, signed_excess_loss, DoremiMixer,
    DoremiOutcome, DoremiParams,
};
pub use odm::{odm_rewards, odm_update, OdmMixer, OdmParams, OdmState};
pub use sampler::{sample_batch, DomainPools};
pub use sim::{simulate_mixer, LossTraceEntry};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::types::{ComponentParams, MixtureWeights, Sample};

/// One line of the weight trajectory: the policy after an update and the
/// signal that drove it (excess losses for DoReMi, rewards for ODM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub weights: Vec<f64>,
    pub signal: Vec<Option<f64>>,
}

/// What a mixer sees at an update.
#[derive(Debug, Clone, Copy)]
pub struct MixObservation<'a> {
    pub step: usize,
    pub seed: u64,
    pub model: &'a ModelState,
    /// Mean per-sample training loss by domain since the previous update.
    pub window_losses: &'a [Option<f64>],
    /// Mean per-sample training loss by domain in the latest batch.
    pub last_batch_losses: &'a [Option<f64>],
    /// Every sample drawn since the previous update.
    pub window: &'a [&'a Sample],
}

/// How a mixer that needs a separately trained reference wants it built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePlan {
    pub hidden_dim: Option<usize>,
    pub reference_steps: Option<usize>,
    pub proxy_steps: Option<usize>,
    /// Skip both auxiliary runs and use these weights directly.
    pub precomputed: Option<MixtureWeights>,
}

pub trait Mixer: Send {
    fn name(&self) -> &str;
    fn initialize(&mut self, init: &MixtureWeights) -> Result<()>;
    fn policy(&self) -> &MixtureWeights;
    fn update(&mut self, obs: &MixObservation<'_>) -> Result<TrajectoryRecord>;

    fn describe(&self) -> String {
        self.name().to_string()
    }

    /// `Some` for offline mixers that train against a reference model.
    fn reference_plan(&self) -> Option<ReferencePlan> {
        None
    }

    fn attach_reference(&mut self, _reference: ModelState) -> Result<()> {
        Err(Error::BadParams(format!(
            "mixer `{}` takes no reference model",
            self.name()
        )))
    }

    /// Weights to hand to a downstream static run.
    fn final_weights(&self) -> MixtureWeights {
        self.policy().clone()
    }
}

/// Keeps the initial mixture forever.
#[derive(Debug, Default)]
pub struct StaticMixer {
    policy: Option<MixtureWeights>,
}

impl StaticMixer {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("static", &[])?;
        Ok(Self::default())
    }
}

impl Mixer for StaticMixer {
    fn name(&self) -> &str {
        "static"
    }

    fn initialize(&mut self, init: &MixtureWeights) -> Result<()> {
        self.policy = Some(init.clone());
        Ok(())
    }

    fn policy(&self) -> &MixtureWeights {
        self.policy
            .as_ref()
            .expect("static mixer used before initialize")
    }

    fn update(&mut self, obs: &MixObservation<'_>) -> Result<TrajectoryRecord> {
        Ok(TrajectoryRecord {
            step: obs.step,
            weights: self.policy().as_slice().to_vec(),
            signal: vec![None; self.policy().len()],
        })
    }
}

/// Draws a fresh Dirichlet(1) mixture at every update.
#[derive(Debug, Default)]
pub struct RandomMixer {
    policy: Option<MixtureWeights>,
}

impl RandomMixer {
    pub fn from_params(params: &ComponentParams) -> Result<Self> {
        params.reject_unknown("random", &[])?;
        Ok(Self::default())
    }
}

impl Mixer for RandomMixer {
    fn name(&self) -> &str {
        "random"
    }

    fn initialize(&mut self, init: &MixtureWeights) -> Result<()> {
        self.policy = Some(init.clone());
        Ok(())
    }

    fn policy(&self) -> &MixtureWeights {
        self.policy
            .as_ref()
            .expect("random mixer used before initialize")
    }

    fn update(&mut self, obs: &MixObservation<'_>) -> Result<TrajectoryRecord> {
        let k = self.policy().len();
        let weights = if k == 1 {
            vec![1.0]
        } else {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(obs.seed, 0xd1c4_0000 + obs.step as u64));
            let d =
                Dirichlet::new_with_size(1.0, k).map_err(|e| Error::BadParams(e.to_string()))?;
            let mut w = d.sample(&mut rng);
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            w
        };
        self.policy = Some(MixtureWeights::new(weights)?);
        Ok(TrajectoryRecord {
            step: obs.step,
            weights: self.policy().as_slice().to_vec(),
            signal: vec![None; k],
        })
    }
}
