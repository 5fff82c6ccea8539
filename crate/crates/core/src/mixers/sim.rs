//! Mixer updates replayed against recorded loss vectors, with no model.

use serde::{Deserialize, Serialize};

use super::{
    doremi_update, signed_excess_loss, DoremiMixer, MixObservation, Mixer, OdmMixer, OdmState,
    RandomMixer, StaticMixer, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::model::{Arch, ModelState};
use crate::types::{MixtureWeights, RunConfig};

/// One line of a loss trace. DoReMi reads `lambda` or the `proxy`/`reference`
/// pair; ODM reads `losses`, where `null` marks an unobserved domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTraceEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<Option<f64>>>,
}

fn trace_width(trace: &[LossTraceEntry]) -> Option<usize> {
    trace.iter().find_map(|e| {
        e.lambda
            .as_ref()
            .map(Vec::len)
            .or(e.proxy.as_ref().map(Vec::len))
            .or(e.losses.as_ref().map(Vec::len))
    })
}

fn missing(i: usize, what: &str) -> Error {
    Error::Parse {
        line: i + 1,
        message: format!("trace entry needs {what}"),
    }
}

/// Replays `trace` through the mixer named in `cfg` and returns one record per entry.
pub fn simulate_mixer(cfg: &RunConfig, trace: &[LossTraceEntry]) -> Result<Vec<TrajectoryRecord>> {
    let k = match (&cfg.init_mixture_proportions, trace_width(trace)) {
        (Some(w), _) => w.len(),
        (None, Some(k)) => k,
        (None, None) => return Ok(Vec::new()),
    };
    let step_of = |i: usize, e: &LossTraceEntry| e.step.unwrap_or(i + 1);
    let mut out = Vec::with_capacity(trace.len());
    match cfg.component_name.as_str() {
        "doremi" => {
            let m = DoremiMixer::from_params(&cfg.component_params)?;
            let mut alpha = MixtureWeights::uniform(k);
            for (i, e) in trace.iter().enumerate() {
                let raw = match (&e.lambda, &e.proxy, &e.reference) {
                    (Some(l), _, _) => l.clone(),
                    (None, Some(p), Some(r)) => signed_excess_loss(p, r)?,
                    _ => return Err(missing(i, "`lambda` or `proxy` and `reference`")),
                };
                let lambda: Vec<f64> = if m.clip_excess {
                    raw.iter().map(|x| x.max(0.0)).collect()
                } else {
                    raw
                };
                alpha = doremi_update(&alpha, &lambda, &m.params)?;
                out.push(TrajectoryRecord {
                    step: step_of(i, e),
                    weights: alpha.as_slice().to_vec(),
                    signal: lambda.into_iter().map(Some).collect(),
                });
            }
        }
        "odm" => {
            let m = OdmMixer::from_params(&cfg.component_params)?;
            let init = cfg
                .init_mixture_proportions
                .clone()
                .unwrap_or_else(|| MixtureWeights::uniform(k));
            m.params.validate(k)?;
            let mut state = OdmState::new(&init)?;
            for (i, e) in trace.iter().enumerate() {
                let losses = e.losses.as_ref().ok_or_else(|| missing(i, "`losses`"))?;
                state = super::odm_update(&state, losses, &m.params)?;
                out.push(TrajectoryRecord {
                    step: step_of(i, e),
                    weights: state.policy.as_slice().to_vec(),
                    signal: super::odm_rewards(&state, &m.params),
                });
            }
        }
        name @ ("static" | "random") => {
            let mut mixer: Box<dyn Mixer> = if name == "static" {
                Box::new(StaticMixer::from_params(&cfg.component_params)?)
            } else {
                Box::new(RandomMixer::from_params(&cfg.component_params)?)
            };
            let init = cfg
                .init_mixture_proportions
                .clone()
                .unwrap_or_else(|| MixtureWeights::uniform(k));
            mixer.initialize(&init)?;
            let model = ModelState::zeros(Arch::new(2, 1, 1));
            for (i, e) in trace.iter().enumerate() {
                out.push(mixer.update(&MixObservation {
                    step: step_of(i, e),
                    seed: cfg.seed,
                    model: &model,
                    window_losses: &[],
                    last_batch_losses: &[],
                    window: &[],
                })?);
            }
        }
        other => {
            return Err(Error::UnknownComponent {
                kind: "mixer".into(),
                name: other.to_string(),
            })
        }
    }
    Ok(out)
}
