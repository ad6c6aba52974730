use serde::{Deserialize, Serialize};

use super::rk4::{guard, Rk4, VectorField};
use super::{BoxDomain, Trajectory};
use crate::error::{Error, Result};

/// Forced Duffing oscillator `x'' + c x' - a x + b x^3 = A cos(omega t)`,
/// state `(x, x')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuffingParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "forcing")]
    pub big_a: f64,
    pub omega: f64,
    pub x0_box: BoxDomain,
}

impl Default for DuffingParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 5.0,
            c: 0.02,
            big_a: 8.0,
            omega: 0.5,
            x0_box: BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]),
        }
    }
}

impl DuffingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) {
            return Err(Error::Config(format!("duffing damping c must be >= 0, got {}", self.c)));
        }
        if !(self.omega > 0.0) {
            return Err(Error::Config(format!("duffing omega must be > 0, got {}", self.omega)));
        }
        if self.x0_box.dim() != 2 {
            return Err(Error::Config("duffing initial box must be 2-dimensional".into()));
        }
        self.x0_box.validate()
    }

    /// Divergence of the vector field, constant and equal to `-c`.
    pub fn divergence(&self) -> f64 {
        -self.c
    }

    /// Conserved energy of the unforced, undamped oscillator.
    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x[1] * x[1] - 0.5 * self.a * x[0] * x[0] + 0.25 * self.b * x[0].powi(4)
    }
}

impl VectorField for DuffingParams {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let (p, v) = (x[0], x[1]);
        dx[0] = v;
        dx[1] = self.big_a * (self.omega * t).cos() - self.c * v + self.a * p - self.b * p * p * p;
    }
}

/// Records `steps` states at `t_k = k dt`, integrating `substeps` RK4 steps
/// between consecutive records.
pub fn simulate_duffing(
    params: &DuffingParams,
    xi: &[f64],
    steps: usize,
    dt: f64,
    substeps: usize,
) -> Result<Trajectory> {
    if !params.x0_box.contains(xi) {
        return Err(Error::Contract(format!("initial state {xi:?} outside the initial box")));
    }
    if steps == 0 || substeps == 0 || !(dt > 0.0) {
        return Err(Error::Contract("steps, substeps and dt must be positive".into()));
    }
    let h = dt / substeps as f64;
    let mut x = xi.to_vec();
    let mut rk = Rk4::new(2);
    let mut states = Vec::with_capacity(steps * 2);
    states.extend_from_slice(&x);
    for k in 1..steps {
        let t0 = (k - 1) as f64 * dt;
        for s in 0..substeps {
            let t = t0 + s as f64 * h;
            rk.step(params, &mut x, t, h)?;
            guard(&x, t + h)?;
        }
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        states,
        dim: 2,
        dt,
        seed_id: 0,
    })
}
