//! Benchmark systems and seeded trajectory generation.

mod duffing;
mod gray_scott;
mod quadrotor;
mod rk4;

pub use duffing::{simulate_duffing, DuffingParams};
pub use gray_scott::{sample_initial_fields, simulate_gray_scott, GrayScottParams, GrayScottSolver};
pub use quadrotor::{simulate_quadrotor, QuadrotorParams};
pub use rk4::{rk4_step, Rk4, VectorField, DIVERGENCE_GUARD};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Config("box bounds have different lengths".into()));
        }
        if let Some(i) = (0..self.dim()).find(|&i| !(self.lower[i] < self.upper[i])) {
            return Err(Error::Config(format!(
                "box axis {i}: lower {} not below upper {}",
                self.lower[i], self.upper[i]
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| rng.random_range(l..=u))
            .collect()
    }
}

/// Recorded states of one trajectory, row-major `steps x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub dim: usize,
    pub dt: f64,
    pub seed_id: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
}

/// A benchmark system together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Duffing(DuffingParams),
    Quadrotor(QuadrotorParams),
    GrayScott(GrayScottParams),
}

impl SystemSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            SystemSpec::Duffing(_) => "duffing",
            SystemSpec::Quadrotor(_) => "quadrotor",
            SystemSpec::GrayScott(_) => "gray_scott",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemSpec::Duffing(_) => 2,
            SystemSpec::Quadrotor(_) => 6,
            SystemSpec::GrayScott(p) => p.state_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::Duffing(p) => p.validate(),
            SystemSpec::Quadrotor(p) => p.validate(),
            SystemSpec::GrayScott(p) => p.validate(),
        }
    }

    /// Draws one trajectory from the initial/input distribution using `rng`.
    pub fn sample_trajectory<R: Rng + ?Sized>(
        &self,
        steps: usize,
        dt: f64,
        substeps: usize,
        rng: &mut R,
    ) -> Result<Trajectory> {
        match self {
            SystemSpec::Duffing(p) => {
                let xi = p.x0_box.sample(rng);
                simulate_duffing(p, &xi, steps, dt, substeps)
            }
            SystemSpec::Quadrotor(p) => {
                if steps != 1 {
                    return Err(Error::Config(
                        "quadrotor trajectories are recorded at the terminal time only (steps = 1)".into(),
                    ));
                }
                let xi = p.x0_box.sample(rng);
                let u1 = rng.random_range(p.u1_range[0]..=p.u1_range[1]);
                let u2 = rng.random_range(p.u2_range[0]..=p.u2_range[1]);
                let states = simulate_quadrotor(p, &xi, u1, u2, p.t1, p.dt)?;
                Ok(Trajectory {
                    states,
                    dim: 6,
                    dt: p.t1,
                    seed_id: 0,
                })
            }
            SystemSpec::GrayScott(p) => {
                let (u0, v0) = sample_initial_fields(p, rng);
                simulate_gray_scott(p, &u0, &v0, steps)
            }
        }
    }
}

/// Size and seed of a generated dataset. `dt` and `substeps` drive the ODE
/// recording grid; the quadrotor records at its terminal time and Gray-Scott
/// uses its own Euler sub-stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            trajectories: 20_000,
            steps: 30,
            dt: 0.1,
            substeps: 10,
            seed: 0,
        }
    }
}

/// Generates `spec.trajectories` independent trajectories. Trajectory `i`
/// draws from its own stream `hash(seed, i)`, so the result does not depend on
/// scheduling.
pub fn generate_dataset(system: &SystemSpec, spec: &DatasetSpec) -> Result<Dataset> {
    system.validate()?;
    if spec.trajectories == 0 || spec.steps == 0 {
        return Err(Error::Config("dataset needs at least one trajectory and one step".into()));
    }
    let trajs: Vec<Trajectory> = (0..spec.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, &[tag::DATASET, i as u64]);
            system
                .sample_trajectory(spec.steps, spec.dt, spec.substeps, &mut rng)
                .map(|mut t| {
                    t.seed_id = i as u64;
                    t
                })
                .map_err(|e| Error::Trajectory {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let dim = system.state_dim();
    let dt = trajs[0].dt;
    let mut states = Vec::with_capacity(spec.trajectories * spec.steps * dim);
    for t in &trajs {
        states.extend(t.states.iter().map(|&x| x as f32));
    }
    Dataset::new(states, spec.trajectories, spec.steps, dim, dt)
        .map(|d| d.with_provenance(system.tag(), spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetSpec {
        DatasetSpec {
            trajectories: 8,
            steps: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_trajectory_shape() {
        let sys = SystemSpec::Duffing(DuffingParams::default());
        let ds = generate_dataset(&sys, &DatasetSpec { trajectories: 1, ..small(0) }).unwrap();
        assert_eq!((ds.n_traj(), ds.steps(), ds.dim()), (1, 5, 2));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let sys = SystemSpec::Duffing(DuffingParams::default());
        let a = generate_dataset(&sys, &small(11)).unwrap();
        let b = generate_dataset(&sys, &small(11)).unwrap();
        assert_eq!(a.states(), b.states());
        let c = generate_dataset(&sys, &small(12)).unwrap();
        assert_ne!(a.state(0, 0), c.state(0, 0));
    }

    #[test]
    fn duffing_initial_states_lie_in_box() {
        let sys = SystemSpec::Duffing(DuffingParams::default());
        let ds = generate_dataset(&sys, &small(1)).unwrap();
        for i in 0..ds.n_traj() {
            assert!(ds.state(i, 0).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn quadrotor_records_terminal_state_only() {
        let sys = SystemSpec::Quadrotor(QuadrotorParams::default());
        let spec = DatasetSpec { trajectories: 4, steps: 1, ..Default::default() };
        let ds = generate_dataset(&sys, &spec).unwrap();
        assert_eq!((ds.steps(), ds.dim()), (1, 6));
        assert!(generate_dataset(&sys, &DatasetSpec { steps: 2, ..spec }).is_err());
    }

    #[test]
    fn gray_scott_dataset_shape() {
        let sys = SystemSpec::GrayScott(GrayScottParams::default());
        let spec = DatasetSpec { trajectories: 2, steps: 3, ..Default::default() };
        let ds = generate_dataset(&sys, &spec).unwrap();
        assert_eq!((ds.steps(), ds.dim()), (3, 512));
    }

    #[test]
    fn failures_name_the_trajectory() {
        let p = DuffingParams { b: -50.0, big_a: 0.0, ..Default::default() };
        let sys = SystemSpec::Duffing(p);
        match generate_dataset(&sys, &DatasetSpec { steps: 200, ..small(0) }) {
            Err(Error::Trajectory { index, .. }) => assert!(index < 8),
            other => panic!("expected trajectory failure, got {other:?}"),
        }
    }

    #[test]
    fn system_spec_rejects_unknown_keys() {
        let ok: SystemSpec = serde_json::from_str(r#"{"kind":"duffing","c":0.5}"#).unwrap();
        assert!(matches!(ok, SystemSpec::Duffing(ref p) if p.c == 0.5 && p.a == 1.0));
        assert!(serde_json::from_str::<SystemSpec>(r#"{"kind":"duffing","cc":0.5}"#).is_err());
    }
}
