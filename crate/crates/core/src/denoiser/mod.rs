//! FiLM-conditioned MLP noise predictor, its manual backward pass, AdamW
//! training and checkpoint IO.

mod adamw;
mod checkpoint;
mod embedding;
mod network;
mod train;

pub use adamw::AdamW;
pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, CHECKPOINT_FORMAT};
pub use embedding::embed_condition;
pub use network::{Architecture, FilmMlp, Real, TensorSpec};
pub use train::{train, DenoiserConfig, TrainReport, SIZE_PRESETS};

use ndarray::Array2;

use crate::datastore::Normalizer;
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};

/// Trained network together with the data normalization and schedule it was
/// trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub normalizer: Normalizer,
    pub schedule_fingerprint: u64,
    pub dataset_checksum: Option<u64>,
    pub net: FilmMlp<f32>,
}

impl DenoiserModel {
    pub fn architecture(&self) -> &Architecture {
        self.net.architecture()
    }

    pub fn horizon(&self) -> usize {
        self.architecture().horizon
    }

    /// Noise prediction for one normalized state, with per-layer finiteness
    /// checks.
    pub fn forward(&self, x_tau: &[f64], tau: usize, k: usize) -> Result<Vec<f64>> {
        let n = self.architecture().state_dim;
        if x_tau.len() != n {
            return Err(Error::Contract(format!("expected {n} values, got {}", x_tau.len())));
        }
        let x = Array2::from_shape_fn((1, n), |(_, j)| x_tau[j] as f32);
        let y = self.net.forward_checked(x.view(), &[tau], &[k])?;
        Ok(y.iter().map(|&v| v as f64).collect())
    }
}

impl NoisePredictor for DenoiserModel {
    fn dim(&self) -> usize {
        self.architecture().state_dim
    }

    fn predict(&self, x_tau: &[f64], tau: usize, k: usize) -> Vec<f64> {
        let n = self.dim();
        let x = Array2::from_shape_vec((x_tau.len() / n, n), x_tau.iter().map(|&v| v as f32).collect())
            .expect("row-major batch");
        match self.net.forward_shared(x.view(), tau, k) {
            Ok(y) => y.iter().map(|&v| v as f64).collect(),
            Err(_) => vec![f64::NAN; x_tau.len()],
        }
    }
}
