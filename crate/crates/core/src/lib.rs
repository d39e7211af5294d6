//! Intermittent CSI updating for a multi-antenna integrated sensing and
//! communication base station.
//!
//! Each frame the base station decides, per communication user and per
//! radar target, whether to spend resources re-estimating the channel or
//! target state, or to predict it from temporal correlation. Decisions are
//! scored by a beamforming solver and learned online by a neural policy.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod baselines;
pub mod beamforming;
pub mod comm;
pub mod config;
pub mod decision;
pub mod drol;
pub mod error;
pub mod harness;
pub mod instances;
pub mod linalg;
pub mod radar;
pub mod rng;
pub mod world;

pub use config::{Preset, Scenario, ScenarioConfig, SystemConfig};
pub use decision::DecisionPair;
pub use error::{IsacError, Result};
