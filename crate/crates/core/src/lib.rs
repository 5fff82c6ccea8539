//! A desk-scale engine for data-centric dynamic training.
//!
//! A small next-token model is trained under one of four regimes: a static
//! mixture, dynamic sample selection, dynamic domain mixing, or per-sample
//! loss reweighting. Components are looked up by name in a
//! [`ComponentRegistry`] and invoked on a [`Schedule`].

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod io;
pub mod mixers;
pub mod model;
pub mod selectors;
pub mod trainers;
pub mod types;
pub mod weighters;

pub use error::{Error, Result};
pub use model::{Arch, Checkpoint, GradientVector, ModelState, OptimizerState};
pub use trainers::{run, ComponentRegistry, RunOutput};
pub use types::{
    ComponentParams, Corpus, MetricsRecord, MixtureWeights, ModelConfig, OptimConfig,
    OptimizerKind, ParamValue, RunConfig, Sample, Schedule, TrainType,
};
