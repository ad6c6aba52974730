use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

/// Gray-Scott reaction-diffusion on a square periodic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrayScottParams {
    pub du: f64,
    pub dv: f64,
    pub feed: f64,
    pub kill: f64,
    pub grid: usize,
    pub dx: f64,
    /// Explicit Euler iterations per recorded step.
    pub substeps: usize,
    /// Values of `u` and `v` inside the initial seed patch.
    pub seed_u: f64,
    pub seed_v: f64,
    /// Half-width of the uniform noise added to both initial fields.
    pub noise: f64,
}

impl Default for GrayScottParams {
    fn default() -> Self {
        Self {
            du: 0.2,
            dv: 0.1,
            feed: 0.055,
            kill: 0.062,
            grid: 16,
            dx: 1.0,
            substeps: 50,
            seed_u: 0.5,
            seed_v: 0.5,
            noise: 0.02,
        }
    }
}

impl GrayScottParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.du > 0.0 && self.dv > 0.0) {
            return Err(Error::Config("gray-scott diffusion coefficients must be positive".into()));
        }
        if self.grid < 4 {
            return Err(Error::Config(format!("gray-scott grid must be >= 4, got {}", self.grid)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("gray-scott substeps must be >= 1".into()));
        }
        if !(self.dx > 0.0) {
            return Err(Error::Config("gray-scott dx must be positive".into()));
        }
        Ok(())
    }

    /// Euler sub-step at 0.8 of the explicit diffusion stability limit.
    pub fn euler_dt(&self) -> f64 {
        0.8 * self.dx * self.dx / (4.0 * self.du.max(self.dv))
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn state_dim(&self) -> usize {
        2 * self.cells()
    }
}

/// Explicit Euler integrator with preallocated buffers.
pub struct GrayScottSolver<'a> {
    p: &'a GrayScottParams,
    dt: f64,
    lu: Vec<f64>,
    lv: Vec<f64>,
}

impl<'a> GrayScottSolver<'a> {
    pub fn new(p: &'a GrayScottParams) -> Self {
        Self::with_dt(p, p.euler_dt())
    }

    pub fn with_dt(p: &'a GrayScottParams, dt: f64) -> Self {
        let n = p.cells();
        Self {
            p,
            dt,
            lu: vec![0.0; n],
            lv: vec![0.0; n],
        }
    }

    fn laplacian(g: usize, inv_dx2: f64, f: &[f64], out: &mut [f64]) {
        for i in 0..g {
            let up = (i + g - 1) % g;
            let down = (i + 1) % g;
            for j in 0..g {
                let left = (j + g - 1) % g;
                let right = (j + 1) % g;
                let c = f[i * g + j];
                out[i * g + j] =
                    (f[up * g + j] + f[down * g + j] + f[i * g + left] + f[i * g + right] - 4.0 * c)
                        * inv_dx2;
            }
        }
    }

    pub fn step(&mut self, u: &mut [f64], v: &mut [f64]) {
        let g = self.p.grid;
        let inv_dx2 = 1.0 / (self.p.dx * self.p.dx);
        Self::laplacian(g, inv_dx2, u, &mut self.lu);
        Self::laplacian(g, inv_dx2, v, &mut self.lv);
        let (f, kf) = (self.p.feed, self.p.feed + self.p.kill);
        for c in 0..u.len() {
            let uvv = u[c] * v[c] * v[c];
            let du = self.p.du * self.lu[c] - uvv + f * (1.0 - u[c]);
            let dv = self.p.dv * self.lv[c] + uvv - kf * v[c];
            u[c] += self.dt * du;
            v[c] += self.dt * dv;
        }
    }
}

/// Records `steps` flattened states `(u, v)`; the first record is the
/// initial field and each further record follows `substeps` Euler steps.
pub fn simulate_gray_scott(
    params: &GrayScottParams,
    u0: &[f64],
    v0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    let cells = params.cells();
    if u0.len() != cells || v0.len() != cells {
        return Err(Error::Contract(format!(
            "initial fields have {} and {} cells, grid needs {cells}",
            u0.len(),
            v0.len()
        )));
    }
    if u0.iter().chain(v0).any(|x| !x.is_finite()) {
        return Err(Error::Contract("initial fields must be finite".into()));
    }
    if steps == 0 {
        return Err(Error::Contract("steps must be positive".into()));
    }
    let mut solver = GrayScottSolver::new(params);
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    let mut states = Vec::with_capacity(steps * 2 * cells);
    states.extend_from_slice(&u);
    states.extend_from_slice(&v);
    for k in 1..steps {
        for s in 0..params.substeps {
            solver.step(&mut u, &mut v);
            if u.iter().chain(&v).any(|x| !x.is_finite()) {
                let sub = (k - 1) * params.substeps + s + 1;
                return Err(Error::Simulation {
                    t: sub as f64 * solver.dt,
                    detail: format!("non-finite field after Euler sub-step {sub}"),
                });
            }
        }
        states.extend_from_slice(&u);
        states.extend_from_slice(&v);
    }
    Ok(Trajectory {
        states,
        dim: 2 * cells,
        dt: params.substeps as f64 * solver.dt,
        seed_id: 0,
    })
}

/// Samples an initial condition: `u = 1, v = 0` with a square seed patch
/// (`seed_u`, `seed_v`) of side 3, 4 or 5 centred on a uniform cell, plus
/// i.i.d. uniform noise in `[-noise, noise]` on both fields.
pub fn sample_initial_fields<R: Rng + ?Sized>(p: &GrayScottParams, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let g = p.grid;
    let mut u = vec![1.0; g * g];
    let mut v = vec![0.0; g * g];
    let ci = rng.random_range(0..g);
    let cj = rng.random_range(0..g);
    let side = rng.random_range(3..=5usize);
    let lo = side / 2;
    for di in 0..side {
        for dj in 0..side {
            let i = (ci + g + di - lo) % g;
            let j = (cj + g + dj - lo) % g;
            u[i * g + j] = p.seed_u;
            v[i * g + j] = p.seed_v;
        }
    }
    for x in u.iter_mut().chain(v.iter_mut()) {
        *x += rng.random_range(-p.noise..=p.noise);
    }
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v_mass(tr: &Trajectory, k: usize, cells: usize) -> f64 {
        tr.state(k)[cells..].iter().sum()
    }

    #[test]
    fn canonical_parameters() {
        let p = GrayScottParams::default();
        assert_eq!((p.du, p.dv, p.feed, p.kill), (0.2, 0.1, 0.055, 0.062));
    }

    #[test]
    fn homogeneous_state_is_fixed() {
        let p = GrayScottParams::default();
        let tr = simulate_gray_scott(&p, &vec![1.0; 256], &vec![0.0; 256], 5).unwrap();
        assert_eq!(tr.dim, 512);
        assert!(tr.states.chunks(512).all(|s| s[..256].iter().all(|&u| u == 1.0)
            && s[256..].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn euler_step_respects_stability_bound() {
        let p = GrayScottParams::default();
        assert!(p.euler_dt() <= p.dx * p.dx / (4.0 * 0.2));
        assert!((p.euler_dt() - 1.0).abs() < 1e-12);
    }

    fn run_euler(p: &GrayScottParams, u: &[f64], v: &[f64], refine: usize) -> Vec<f64> {
        let mut solver = GrayScottSolver::with_dt(p, p.euler_dt() / refine as f64);
        let (mut u, mut v) = (u.to_vec(), v.to_vec());
        for _ in 0..refine * p.substeps {
            solver.step(&mut u, &mut v);
        }
        u.extend(v);
        u
    }

    fn max_dev(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn seed_patch_grows_and_euler_converges_first_order() {
        let p = GrayScottParams::default();
        let mut u = vec![1.0; 256];
        let mut v = vec![0.0; 256];
        for i in 6..10 {
            for j in 6..10 {
                u[i * 16 + j] = p.seed_u;
                v[i * 16 + j] = p.seed_v;
            }
        }
        let tr = simulate_gray_scott(&p, &u, &v, 2).unwrap();
        assert!(v_mass(&tr, 1, 256) > v_mass(&tr, 0, 256));
        assert_eq!(tr.state(1), &run_euler(&p, &u, &v, 1)[..]);

        let reference = run_euler(&p, &u, &v, 16);
        let e1 = max_dev(&run_euler(&p, &u, &v, 1), &reference);
        let e2 = max_dev(&run_euler(&p, &u, &v, 2), &reference);
        assert!(e1 < 1e-2, "{e1}");
        let order = (e1 / e2).log2();
        assert!((0.7..=1.3).contains(&order), "observed order {order}");
    }

    #[test]
    fn sampled_initial_fields_are_reproducible() {
        use rand::SeedableRng;
        let p = GrayScottParams::default();
        let a = sample_initial_fields(&p, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let b = sample_initial_fields(&p, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let patch = a.1.iter().filter(|&&v| v > 0.2).count();
        assert!([9, 16, 25].contains(&patch), "patch cells {patch}");
    }
}
