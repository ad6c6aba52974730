//! Data-driven reachable-set estimation with a diffusion-model nonconformity
//! score and finite-sample calibration.

pub mod calibration;
pub mod checksum;
pub mod christoffel;
pub mod datastore;
pub mod denoiser;
pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod rng;
pub mod util;

pub use calibration::{CalibrationResult, ReachPredictor, RiskBudget, StateScorer};
pub use christoffel::{ChristoffelModel, ChristoffelScorer, Ridge};
pub use datastore::{Dataset, Normalizer, SplitIndex};
pub use denoiser::{DenoiserConfig, DenoiserModel};
pub use diffusion::{NoisePredictor, NoiseSchedule, ScoreConfig};
pub use dynamics::{BoxDomain, DatasetSpec, SystemSpec};
pub use error::{Error, Result};
pub use evaluation::{GridSpec, MembershipMask};
pub use pipeline::RunConfig;
