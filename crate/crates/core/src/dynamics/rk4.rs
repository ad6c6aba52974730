use crate::error::{Error, Result};

/// Autonomous or time-dependent vector field `dx/dt = f(t, x)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

impl<F> VectorField for (usize, F)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        (self.1)(t, x, dx)
    }
}

/// Classical fourth-order Runge-Kutta stepper with reusable stage buffers.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `x` in place by one step of size `dt` starting at time `t`.
    pub fn step<F: VectorField + ?Sized>(
        &mut self,
        field: &F,
        x: &mut [f64],
        t: f64,
        dt: f64,
    ) -> Result<()> {
        let n = x.len();
        debug_assert_eq!(n, self.k1.len());
        let half = 0.5 * dt;

        field.eval(t, x, &mut self.k1);
        check_finite(&self.k1, t)?;
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        field.eval(t + half, &self.tmp, &mut self.k2);
        check_finite(&self.k2, t + half)?;
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        field.eval(t + half, &self.tmp, &mut self.k3);
        check_finite(&self.k3, t + half)?;
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        field.eval(t + dt, &self.tmp, &mut self.k4);
        check_finite(&self.k4, t + dt)?;

        let sixth = dt / 6.0;
        for i in 0..n {
            x[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Simulation {
            t,
            detail: "vector field returned a non-finite value".into(),
        })
    }
}

/// One RK4 step from `state` at time `t`; returns the new state.
pub fn rk4_step<F: VectorField + ?Sized>(
    field: &F,
    state: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("rk4 step size must be positive, got {dt}")));
    }
    let mut x = state.to_vec();
    Rk4::new(state.len()).step(field, &mut x, t, dt)?;
    Ok(x)
}

/// States whose magnitude exceeds this are reported as divergence.
pub const DIVERGENCE_GUARD: f64 = 1e6;

pub(crate) fn guard(x: &[f64], t: f64) -> Result<()> {
    match x.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD) {
        None => Ok(()),
        Some(v) => Err(Error::Simulation {
            t,
            detail: format!("state component {v} exceeds divergence guard {DIVERGENCE_GUARD:e}"),
        }),
    }
}
