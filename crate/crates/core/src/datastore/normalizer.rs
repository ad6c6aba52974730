use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension standardization fitted on training trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Normalizes a row-major block of states in place.
    pub fn apply_rows(&self, rows: &mut [f64]) {
        let d = self.dim();
        for row in rows.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Mean and (population) standard deviation over every step of the listed
/// trajectories; standard deviations are floored at [`STD_FLOOR`].
pub fn fit_normalizer(ds: &Dataset, ids: &[usize]) -> Result<Normalizer> {
    if ids.is_empty() {
        return Err(Error::Contract("normalizer needs at least one trajectory".into()));
    }
    let d = ds.dim();
    let count = (ids.len() * ds.steps()) as f64;
    let mut mean = vec![0.0f64; d];
    for &i in ids {
        for k in 0..ds.steps() {
            for (m, &v) in mean.iter_mut().zip(ds.state(i, k)) {
                *m += v as f64;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; d];
    for &i in ids {
        for k in 0..ds.steps() {
            for ((s, &v), m) in var.iter_mut().zip(ds.state(i, k)).zip(&mean) {
                let e = v as f64 - m;
                *s += e * e;
            }
        }
    }
    let std = var.iter().map(|s| (s / count).sqrt().max(STD_FLOOR)).collect();
    Ok(Normalizer { mean, std })
}
