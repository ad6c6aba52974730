use nalgebra::{DMatrix, DVector};

use super::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};

/// Gaussian data distribution `N(mean, cov)`, for which the Bayes-optimal
/// denoiser has a closed form.
#[derive(Debug, Clone)]
pub struct GaussianToy {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianToy {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.len() != n * n {
            return Err(Error::Contract(format!("covariance needs {} entries, got {}", n * n, cov.len())));
        }
        let cov = DMatrix::from_row_slice(n, n, &cov);
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::Contract("covariance is not symmetric".into()));
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::Numeric("covariance is not positive definite".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// `E[x0 | x_tau] = m + sqrt(ab) S (ab S + (1 - ab) I)^-1 (x_tau - sqrt(ab) m)`.
    pub fn posterior_mean(&self, x_tau: &[f64], tau: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let ab = schedule.alpha_bar(tau);
        let n = self.dim();
        let a = &self.cov * ab + DMatrix::identity(n, n) * (1.0 - ab);
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numeric(format!("posterior system singular at tau = {tau}")))?;
        let r = DVector::from_column_slice(x_tau) - &self.mean * ab.sqrt();
        let y = chol.solve(&r);
        Ok((&self.mean + &self.cov * y * ab.sqrt()).as_slice().to_vec())
    }
}

/// Bayes-optimal noise prediction `(x_tau - sqrt(ab) x0_hat) / sqrt(1 - ab)`.
pub fn gaussian_oracle_denoiser(
    toy: &GaussianToy,
    x_tau: &[f64],
    tau: usize,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let ab = schedule.alpha_bar(tau);
    let x0 = toy.posterior_mean(x_tau, tau, schedule)?;
    Ok(x_tau
        .iter()
        .zip(&x0)
        .map(|(xt, x)| (xt - ab.sqrt() * x) / (1.0 - ab).sqrt())
        .collect())
}

/// [`gaussian_oracle_denoiser`] as a [`NoisePredictor`].
pub struct GaussianOracle {
    pub toy: GaussianToy,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for GaussianOracle {
    fn dim(&self) -> usize {
        self.toy.dim()
    }

    fn predict(&self, x_tau: &[f64], tau: usize, _k: usize) -> Vec<f64> {
        x_tau
            .chunks_exact(self.dim())
            .flat_map(|row| {
                gaussian_oracle_denoiser(&self.toy, row, tau, &self.schedule)
                    .expect("toy covariance is SPD")
            })
            .collect()
    }
}
