use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use super::rk4::{guard, Rk4, VectorField};
use super::BoxDomain;
use crate::error::{Error, Result};

/// Planar quadrotor with state `(x, h, theta, x', h', theta')` under constant
/// thrust `u1` and pitch setpoint `u2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    pub g: f64,
    pub k_rotor: f64,
    pub d0: f64,
    pub d1: f64,
    pub n0: f64,
    pub x0_box: BoxDomain,
    pub u1_range: [f64; 2],
    pub u2_range: [f64; 2],
    /// Terminal time at which states are recorded.
    pub t1: f64,
    /// Integration step.
    pub dt: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        let g = 9.81;
        let k_rotor = 0.89 / 1.4;
        let hover = g / k_rotor;
        Self {
            g,
            k_rotor,
            d0: 70.0,
            d1: 17.0,
            n0: 55.0,
            x0_box: BoxDomain::new(
                vec![-1.7, 0.3, -std::f64::consts::PI / 12.0, -0.8, -1.0, -FRAC_PI_2],
                vec![1.7, 2.0, std::f64::consts::PI / 12.0, 0.8, 1.0, FRAC_PI_2],
            ),
            u1_range: [hover - 1.5, hover + 1.5],
            u2_range: [-FRAC_PI_4, FRAC_PI_4],
            t1: 5.0,
            dt: 0.01,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) {
            return Err(Error::Config(format!("gravity must be positive, got {}", self.g)));
        }
        for (name, r) in [("u1_range", self.u1_range), ("u2_range", self.u2_range)] {
            if !(r[0] <= r[1]) {
                return Err(Error::Config(format!("{name} is empty: {r:?}")));
            }
        }
        if !(self.t1 > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("quadrotor t1 and dt must be positive".into()));
        }
        if self.x0_box.dim() != 6 {
            return Err(Error::Config("quadrotor initial box must be 6-dimensional".into()));
        }
        self.x0_box.validate()
    }
}

struct QuadrotorField<'a> {
    p: &'a QuadrotorParams,
    u1: f64,
    u2: f64,
}

impl VectorField for QuadrotorField<'_> {
    fn dim(&self) -> usize {
        6
    }

    fn eval(&self, _t: f64, s: &[f64], ds: &mut [f64]) {
        let theta = s[2];
        let thrust = self.u1 * self.p.k_rotor;
        ds[0] = s[3];
        ds[1] = s[4];
        ds[2] = s[5];
        ds[3] = thrust * theta.sin();
        ds[4] = -self.p.g + thrust * theta.cos();
        ds[5] = -self.p.d0 * theta - self.p.d1 * s[5] + self.p.n0 * self.u2;
    }
}

/// Integrates from `xi` to time `t1` with step close to `dt` and returns the
/// terminal state.
pub fn simulate_quadrotor(
    params: &QuadrotorParams,
    xi: &[f64],
    u1: f64,
    u2: f64,
    t1: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if xi.len() != 6 {
        return Err(Error::Contract(format!("quadrotor state has 6 entries, got {}", xi.len())));
    }
    let in_range = |r: [f64; 2], u: f64| u >= r[0] && u <= r[1];
    if !in_range(params.u1_range, u1) || !in_range(params.u2_range, u2) {
        return Err(Error::Contract(format!("inputs ({u1}, {u2}) outside the admissible set")));
    }
    if !(dt > 0.0) || t1 < 0.0 {
        return Err(Error::Contract("dt must be positive and t1 non-negative".into()));
    }
    let n = (t1 / dt).round().max(1.0) as usize;
    let h = t1 / n as f64;
    let field = QuadrotorField { p: params, u1, u2 };
    let mut x = xi.to_vec();
    let mut rk = Rk4::new(6);
    for i in 0..n {
        let t = i as f64 * h;
        rk.step(&field, &mut x, t, h)?;
        guard(&x, t + h)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta_exact(t: f64) -> f64 {
        // theta'' = -70 theta - 17 theta', theta(0) = 0.1, theta'(0) = 0:
        // roots -7 and -10.
        (1.0 / 3.0) * (-7.0 * t).exp() - (0.7 / 3.0) * (-10.0 * t).exp()
    }

    #[test]
    fn input_ranges_follow_hover_thrust() {
        let p = QuadrotorParams::default();
        let hover = p.g / p.k_rotor;
        assert!((p.u1_range[0] - (hover - 1.5)).abs() < 1e-12);
        assert!((p.u1_range[1] - (hover + 1.5)).abs() < 1e-12);
        assert_eq!(p.u2_range, [-FRAC_PI_4, FRAC_PI_4]);
    }

    #[test]
    fn hover_equilibrium_holds_position() {
        let p = QuadrotorParams::default();
        let xi = [0.5, 1.0, 0.0, 0.0, 0.0, 0.0];
        let x = simulate_quadrotor(&p, &xi, p.g / p.k_rotor, 0.0, 5.0, 0.01).unwrap();
        for (a, b) in x.iter().zip(xi) {
            assert!((a - b).abs() < 1e-9, "{x:?}");
        }
    }

    #[test]
    fn pitch_loop_matches_closed_form() {
        let p = QuadrotorParams::default();
        let xi = [0.0, 1.0, 0.1, 0.0, 0.0, 0.0];
        let x = simulate_quadrotor(&p, &xi, p.u1_range[0], 0.0, 1.0, 0.01).unwrap();
        assert!((x[2] - theta_exact(1.0)).abs() < 1e-5);
    }

    #[test]
    fn global_error_has_fourth_order_slope() {
        let p = QuadrotorParams::default();
        let xi = [0.0, 1.0, 0.1, 0.0, 0.0, 0.0];
        let dts = [0.1, 0.05, 0.025, 0.0125];
        let pts: Vec<(f64, f64)> = dts
            .iter()
            .map(|&dt| {
                let x = simulate_quadrotor(&p, &xi, p.u1_range[0], 0.0, 1.0, dt).unwrap();
                (dt.ln(), (x[2] - theta_exact(1.0)).abs().ln())
            })
            .collect();
        let slope = crate::util::ls_slope(&pts);
        assert!((3.7..=4.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn rejects_inputs_outside_admissible_set() {
        let p = QuadrotorParams::default();
        let xi = [0.0; 6];
        assert!(simulate_quadrotor(&p, &xi, 0.0, 0.0, 1.0, 0.01).is_err());
    }
}
