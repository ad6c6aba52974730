use ndarray::{Array2, ArrayView1, ArrayView2, Axis, LinalgScalar};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::embed_condition;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

/// Scalar type the network can run in (`f32` in production, `f64` for
/// gradient checks).
pub trait Real: LinalgScalar + Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static {}

impl<T: LinalgScalar + Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static> Real for T {}

#[inline]
fn cast<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("representable")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub state_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub diffusion_steps: usize,
    /// Number of recorded physical steps `K`.
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Whether weight decay applies (weight matrices only).
    pub decay: bool,
}

impl TensorSpec {
    fn new(name: String, rows: usize, cols: usize, decay: bool) -> Self {
        Self { name, rows, cols, decay }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const FW1: usize = 0;
const FB1: usize = 1;
const FW2: usize = 2;
const FB2: usize = 3;

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::Config("denoiser needs state_dim, hidden_dim and layers >= 1".into()));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!("embed_dim must be even and >= 2, got {}", self.embed_dim)));
        }
        if self.diffusion_steps == 0 || self.horizon == 0 {
            return Err(Error::Config("denoiser needs T >= 1 and K >= 1".into()));
        }
        Ok(())
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn film_hidden(&self) -> usize {
        2 * self.embed_dim
    }

    /// Per-layer (scale, shift) pairs produced by the FiLM projection.
    pub fn film_dim(&self) -> usize {
        2 * self.hidden_dim * self.layers
    }

    /// Parameter tensors in storage order. Matrices map row vectors:
    /// `y = x W + b` with `W` of shape `in x out`.
    pub fn tensors(&self) -> Vec<TensorSpec> {
        let (h, n) = (self.hidden_dim, self.state_dim);
        let mut t = vec![
            TensorSpec::new("film_w1".into(), self.cond_dim(), self.film_hidden(), true),
            TensorSpec::new("film_b1".into(), 1, self.film_hidden(), false),
            TensorSpec::new("film_w2".into(), self.film_hidden(), self.film_dim(), true),
            TensorSpec::new("film_b2".into(), 1, self.film_dim(), false),
        ];
        for l in 0..self.layers {
            let fan_in = if l == 0 { n } else { h };
            t.push(TensorSpec::new(format!("layer{l}_w"), fan_in, h, true));
            t.push(TensorSpec::new(format!("layer{l}_b"), 1, h, false));
        }
        t.push(TensorSpec::new("out_w".into(), h, n, true));
        t.push(TensorSpec::new("out_b".into(), 1, n, false));
        t
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(TensorSpec::len).sum()
    }

    fn layer_w(&self, l: usize) -> usize {
        4 + 2 * l
    }

    fn out_w(&self) -> usize {
        4 + 2 * self.layers
    }
}

/// FiLM-conditioned MLP noise predictor with all parameters in one flat
/// buffer (the order of [`Architecture::tensors`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FilmMlp<F> {
    arch: Architecture,
    specs: Vec<TensorSpec>,
    offsets: Vec<usize>,
    params: Vec<F>,
}

/// Intermediate values kept for the backward pass.
struct Tape<F> {
    cond: Array2<F>,
    film_pre: Array2<F>,
    film_act: Array2<F>,
    film: Array2<F>,
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
    modulated: Vec<Array2<F>>,
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
fn silu<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

impl<F: Real> FilmMlp<F> {
    /// Kaiming-uniform weights, zero biases and a zero output layer.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let specs = arch.tensors();
        let out_w = arch.out_w();
        let mut params = Vec::with_capacity(arch.param_count());
        for (i, s) in specs.iter().enumerate() {
            if s.decay && i != out_w {
                let bound = (6.0 / s.rows as f64).sqrt();
                params.extend((0..s.len()).map(|_| cast::<F>(rng.random_range(-bound..bound))));
            } else {
                params.extend(std::iter::repeat_n(F::zero(), s.len()));
            }
        }
        Ok(Self::assemble(arch, specs, params))
    }

    fn assemble(arch: Architecture, specs: Vec<TensorSpec>, params: Vec<F>) -> Self {
        let offsets = specs
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.len();
                Some(o)
            })
            .collect();
        Self {
            arch,
            specs,
            offsets,
            params,
        }
    }

    pub fn from_params(arch: Architecture, params: Vec<F>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Contract(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        let specs = arch.tensors();
        Ok(Self::assemble(arch, specs, params))
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    /// Mask of parameters subject to weight decay.
    pub fn decay_mask(&self) -> Vec<bool> {
        self.specs
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.decay, s.len()))
            .collect()
    }

    pub fn convert<G: Real>(&self) -> FilmMlp<G> {
        let params = self
            .params
            .iter()
            .map(|v| cast::<G>(v.to_f64().expect("finite")))
            .collect();
        FilmMlp::assemble(self.arch.clone(), self.specs.clone(), params)
    }

    fn mat(&self, i: usize) -> ArrayView2<'_, F> {
        let s = &self.specs[i];
        ArrayView2::from_shape((s.rows, s.cols), &self.params[self.offsets[i]..self.offsets[i] + s.len()])
            .expect("tensor shape")
    }

    fn bias(&self, i: usize) -> ArrayView1<'_, F> {
        let s = &self.specs[i];
        ArrayView1::from(&self.params[self.offsets[i]..self.offsets[i] + s.len()])
    }

    /// Condition embedding for `(tau, k)` in the network's scalar type.
    pub fn condition(&self, tau: usize, k: usize) -> Result<Vec<F>> {
        let a = &self.arch;
        Ok(embed_condition(tau, k, a.diffusion_steps, a.horizon, a.embed_dim)?
            .into_iter()
            .map(cast)
            .collect())
    }

    fn film_forward(&self, cond: &Array2<F>) -> (Array2<F>, Array2<F>, Array2<F>) {
        let pre = cond.dot(&self.mat(FW1)) + &self.bias(FB1);
        let act = pre.mapv(silu);
        let film = act.dot(&self.mat(FW2)) + &self.bias(FB2);
        (pre, act, film)
    }

    /// Runs the network with one condition row per input row. `film` holds
    /// `(1 + scale, shift)` source rows, either one shared row or one per input.
    fn trunk(&self, x: ArrayView2<'_, F>, film: &Array2<F>, mut tape: Option<&mut Tape<F>>) -> Array2<F> {
        let h = self.arch.hidden_dim;
        let shared = film.nrows() == 1;
        let mut a = x.to_owned();
        for l in 0..self.arch.layers {
            let wi = self.arch.layer_w(l);
            let z = a.dot(&self.mat(wi)) + &self.bias(wi + 1);
            let mut zt = z.clone();
            for (r, mut row) in zt.axis_iter_mut(Axis(0)).enumerate() {
                let f = film.row(if shared { 0 } else { r });
                let (g, b) = (f.slice(ndarray::s![2 * l * h..(2 * l + 1) * h]), f.slice(ndarray::s![(2 * l + 1) * h..(2 * l + 2) * h]));
                for j in 0..h {
                    row[j] = (F::one() + g[j]) * row[j] + b[j];
                }
            }
            let next = zt.mapv(silu);
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut a, next));
                t.pre.push(z);
                t.modulated.push(zt);
            } else {
                a = next;
            }
        }
        let ow = self.arch.out_w();
        let y = a.dot(&self.mat(ow)) + &self.bias(ow + 1);
        if let Some(t) = tape {
            t.inputs.push(a);
        }
        y
    }

    /// Forward pass for a batch sharing the condition `(tau, k)`.
    pub fn forward_shared(&self, x: ArrayView2<'_, F>, tau: usize, k: usize) -> Result<Array2<F>> {
        let cond = Array2::from_shape_vec((1, self.arch.cond_dim()), self.condition(tau, k)?).expect("shape");
        let (_, _, film) = self.film_forward(&cond);
        Ok(self.trunk(x, &film, None))
    }

    /// Forward pass with per-row conditions.
    pub fn forward(&self, x: ArrayView2<'_, F>, taus: &[usize], ks: &[usize]) -> Result<Array2<F>> {
        let cond = self.conditions(taus, ks)?;
        let (_, _, film) = self.film_forward(&cond);
        Ok(self.trunk(x, &film, None))
    }

    /// Like [`FilmMlp::forward`] but reports the first layer whose
    /// activations are non-finite.
    pub fn forward_checked(&self, x: ArrayView2<'_, F>, taus: &[usize], ks: &[usize]) -> Result<Array2<F>> {
        let mut tape = self.empty_tape(self.conditions(taus, ks)?);
        let y = self.run_tape(x, &mut tape);
        let finite = |a: &Array2<F>| a.iter().all(|v| v.is_finite());
        if !finite(&tape.film) {
            return Err(Error::Numeric("non-finite activations in film projection".into()));
        }
        for (l, a) in tape.modulated.iter().enumerate() {
            if !finite(a) {
                return Err(Error::Numeric(format!("non-finite activations in hidden layer {l}")));
            }
        }
        if !finite(&y) {
            return Err(Error::Numeric("non-finite activations in output layer".into()));
        }
        Ok(y)
    }

    fn conditions(&self, taus: &[usize], ks: &[usize]) -> Result<Array2<F>> {
        if taus.len() != ks.len() {
            return Err(Error::Contract("taus and ks differ in length".into()));
        }
        let c = self.arch.cond_dim();
        let mut cond = Vec::with_capacity(taus.len() * c);
        for (&tau, &k) in taus.iter().zip(ks) {
            cond.extend(self.condition(tau, k)?);
        }
        Ok(Array2::from_shape_vec((taus.len(), c), cond).expect("shape"))
    }

    fn empty_tape(&self, cond: Array2<F>) -> Tape<F> {
        Tape {
            cond,
            film_pre: Array2::zeros((0, 0)),
            film_act: Array2::zeros((0, 0)),
            film: Array2::zeros((0, 0)),
            inputs: Vec::new(),
            pre: Vec::new(),
            modulated: Vec::new(),
        }
    }

    fn run_tape(&self, x: ArrayView2<'_, F>, tape: &mut Tape<F>) -> Array2<F> {
        let (pre, act, film) = self.film_forward(&tape.cond);
        tape.film_pre = pre;
        tape.film_act = act;
        tape.film = film;
        let film = std::mem::replace(&mut tape.film, Array2::zeros((0, 0)));
        let y = self.trunk(x, &film, Some(tape));
        tape.film = film;
        y
    }

    fn backward(&self, tape: &Tape<F>, dy: Array2<F>) -> Vec<F> {
        let arch = &self.arch;
        let h = arch.hidden_dim;
        let mut grad = vec![F::zero(); self.params.len()];
        let mut put = |i: usize, g: Array2<F>| {
            let o = self.offsets[i];
            grad[o..o + g.len()]
                .iter_mut()
                .zip(g.iter())
                .for_each(|(d, s)| *d = *s);
        };
        let col_sum = |a: &Array2<F>| a.sum_axis(Axis(0)).insert_axis(Axis(0));

        let ow = arch.out_w();
        let last = &tape.inputs[arch.layers];
        put(ow, last.t().dot(&dy));
        put(ow + 1, col_sum(&dy));
        let mut da = dy.dot(&self.mat(ow).t());

        let mut dfilm = Array2::<F>::zeros(tape.film.raw_dim());
        for l in (0..arch.layers).rev() {
            let (z, zt) = (&tape.pre[l], &tape.modulated[l]);
            let mut dz = Array2::<F>::zeros(z.raw_dim());
            for r in 0..z.nrows() {
                let f = tape.film.row(r);
                let mut df = dfilm.row_mut(r);
                for j in 0..h {
                    let dzt = da[[r, j]] * silu_grad(zt[[r, j]]);
                    df[2 * l * h + j] = dzt * z[[r, j]];
                    df[(2 * l + 1) * h + j] = dzt;
                    dz[[r, j]] = dzt * (F::one() + f[2 * l * h + j]);
                }
            }
            let wi = arch.layer_w(l);
            put(wi, tape.inputs[l].t().dot(&dz));
            put(wi + 1, col_sum(&dz));
            if l > 0 {
                da = dz.dot(&self.mat(wi).t());
            }
        }

        put(FW2, tape.film_act.t().dot(&dfilm));
        put(FB2, col_sum(&dfilm));
        let mut dpre = dfilm.dot(&self.mat(FW2).t());
        dpre.zip_mut_with(&tape.film_pre, |d, &p| *d = *d * silu_grad(p));
        put(FW1, tape.cond.t().dot(&dpre));
        put(FB1, col_sum(&dpre));
        grad
    }

    /// Loss `sum_i ||eps_theta(x_tau_i, tau_i, k_i) - eps_i||^2 / denom` and its
    /// gradient for fixed diffusion steps and noise.
    pub fn loss_and_grad_fixed(
        &self,
        x0: ArrayView2<'_, F>,
        ks: &[usize],
        taus: &[usize],
        eps: ArrayView2<'_, F>,
        schedule: &NoiseSchedule,
        denom: usize,
    ) -> Result<(f64, Vec<F>)> {
        let mut x_tau = x0.to_owned();
        for (r, mut row) in x_tau.axis_iter_mut(Axis(0)).enumerate() {
            let ab = schedule.alpha_bar(taus[r]);
            let (sa, sn) = (cast::<F>(ab.sqrt()), cast::<F>((1.0 - ab).sqrt()));
            row.zip_mut_with(&eps.row(r), |x, &e| *x = sa * *x + sn * e);
        }
        let mut tape = self.empty_tape(self.conditions(taus, ks)?);
        let y = self.run_tape(x_tau.view(), &mut tape);
        let diff = y - &eps;
        let loss = diff.iter().map(|d| d.to_f64().unwrap().powi(2)).sum::<f64>() / denom as f64;
        let scale = cast::<F>(2.0 / denom as f64);
        let grad = self.backward(&tape, diff.mapv(|d| d * scale));
        Ok((loss, grad))
    }

    /// Draws `tau ~ U{1..T}` and `eps ~ N(0, I)` per row (row by row: tau, then
    /// the noise vector) and returns the loss and gradient with mean taken
    /// over `denom` samples.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        x0: ArrayView2<'_, F>,
        ks: &[usize],
        schedule: &NoiseSchedule,
        rng: &mut R,
        denom: usize,
    ) -> Result<(f64, Vec<F>)> {
        if x0.nrows() == 0 || x0.nrows() != ks.len() {
            return Err(Error::Contract("loss needs a nonempty batch with one k per row".into()));
        }
        let (b, n) = x0.dim();
        let mut taus = Vec::with_capacity(b);
        let mut eps = Array2::<F>::zeros((b, n));
        for mut row in eps.axis_iter_mut(Axis(0)) {
            taus.push(rng.random_range(1..=schedule.steps()));
            for e in row.iter_mut() {
                let v: f64 = StandardNormal.sample(rng);
                *e = cast(v);
            }
        }
        self.loss_and_grad_fixed(x0, ks, &taus, eps.view(), schedule, denom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;
    use crate::rng::stream;

    fn arch(n: usize, h: usize, l: usize) -> Architecture {
        Architecture {
            state_dim: n,
            hidden_dim: h,
            layers: l,
            embed_dim: 4,
            diffusion_steps: 1000,
            horizon: 5,
        }
    }

    fn randomized(a: Architecture, seed: u64) -> FilmMlp<f64> {
        let mut net = FilmMlp::<f64>::init(a, &mut stream(seed, &[])).unwrap();
        let mut rng = stream(seed, &[1]);
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        net
    }

    #[test]
    fn zero_output_layer_gives_zero_prediction() {
        let net = FilmMlp::<f32>::init(arch(3, 16, 2), &mut stream(0, &[])).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f32 - 5.0);
        let y = net.forward(x.view(), &[1, 50, 999, 3], &[0, 1, 2, 4]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_matches_layout() {
        let a = arch(2, 128, 2);
        let c = 8;
        let f = 2 * 128 * 2;
        let want = c * 8 + 8 + 8 * f + f + (2 * 128 + 128) + (128 * 128 + 128) + (128 * 2 + 2);
        assert_eq!(a.param_count(), want);
        assert_eq!(FilmMlp::<f32>::init(a, &mut stream(0, &[])).unwrap().params().len(), want);
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let net = randomized(arch(2, 12, 3), 5).convert::<f32>();
        let x = Array2::from_shape_fn((6, 2), |(i, j)| ((i + 2 * j) as f32 * 0.7).sin());
        let taus = [1, 2, 3, 400, 1000, 7];
        let ks = [0, 4, 2, 1, 3, 0];
        let batch = net.forward(x.view(), &taus, &ks).unwrap();
        for r in 0..6 {
            let one = net.forward_shared(x.slice(ndarray::s![r..r + 1, ..]), taus[r], ks[r]).unwrap();
            for j in 0..2 {
                assert!((one[[0, j]] - batch[[r, j]]).abs() <= 1e-6, "{r},{j}");
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let s = ScheduleConfig::default().build().unwrap();
        let net = randomized(arch(3, 6, 2), 11);
        let x0 = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 1.3).cos());
        let ks = [0, 1, 2, 3, 4];
        let taus = [1, 10, 200, 600, 999];
        let eps = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 5 * j) as f64 * 0.9).sin());
        let (_, grad) = net.loss_and_grad_fixed(x0.view(), &ks, &taus, eps.view(), &s, 5).unwrap();

        // probe each tensor at a few positions
        let mut probes = Vec::new();
        for (i, spec) in net.specs().iter().enumerate() {
            for q in [0, spec.len() / 2, spec.len() - 1] {
                probes.push(net.offsets[i] + q);
            }
        }
        let h = 1e-6;
        for &p in &probes {
            let mut plus = net.clone();
            plus.params_mut()[p] += h;
            let mut minus = net.clone();
            minus.params_mut()[p] -= h;
            let lp = plus.loss_and_grad_fixed(x0.view(), &ks, &taus, eps.view(), &s, 5).unwrap().0;
            let lm = minus.loss_and_grad_fixed(x0.view(), &ks, &taus, eps.view(), &s, 5).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-8);
            assert!(rel < 1e-3, "param {p}: analytic {} vs fd {fd}", grad[p]);
        }
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let s = ScheduleConfig::default().build().unwrap();
        let net = randomized(arch(2, 8, 2), 3);
        let x0 = Array2::from_shape_fn((3, 2), |(i, j)| (i as f64) - j as f64);
        let eps = Array2::from_shape_fn((3, 2), |(i, j)| ((i * 2 + j) as f64).sin());
        let single = net.loss_and_grad_fixed(x0.view(), &[0, 1, 2], &[5, 6, 7], eps.view(), &s, 3).unwrap().0;
        let x2 = ndarray::concatenate(Axis(0), &[x0.view(), x0.view()]).unwrap();
        let e2 = ndarray::concatenate(Axis(0), &[eps.view(), eps.view()]).unwrap();
        let double = net
            .loss_and_grad_fixed(x2.view(), &[0, 1, 2, 0, 1, 2], &[5, 6, 7, 5, 6, 7], e2.view(), &s, 6)
            .unwrap()
            .0;
        assert!((single - double).abs() < 1e-12);
    }

    #[test]
    fn zero_network_loss_is_noise_energy() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut net = FilmMlp::<f64>::init(arch(2, 8, 2), &mut stream(0, &[])).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let b = 20_000;
        let x0 = Array2::from_shape_fn((b, 2), |(i, _)| (i as f64 * 0.01).sin());
        let ks = vec![0; b];
        let (loss, _) = net.loss_and_grad(x0.view(), &ks, &s, &mut stream(2, &[]), b).unwrap();
        assert!((loss - 2.0).abs() < 0.06, "{loss}");
    }

    #[test]
    fn checked_forward_names_failing_layer() {
        let mut net = randomized(arch(2, 4, 2), 1);
        let a = net.architecture().clone();
        let off = net.offsets[a.layer_w(1)];
        net.params_mut()[off] = f64::NAN;
        let x = Array2::from_elem((1, 2), 0.5);
        let err = net.forward_checked(x.view(), &[1], &[0]).unwrap_err();
        assert!(err.to_string().contains("hidden layer 1"), "{err}");
    }
}
