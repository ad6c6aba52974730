//! Noise schedule, forward corruption and the reconstruction-error score.

mod gaussian;
mod schedule;
mod score;

pub use gaussian::{gaussian_oracle_denoiser, GaussianOracle, GaussianToy};
pub use schedule::{make_schedule, noisify, NoiseSchedule, ScheduleConfig};
pub use score::{score, DiffusionScorer, NoisePredictor, ScoreConfig, Weighting};
