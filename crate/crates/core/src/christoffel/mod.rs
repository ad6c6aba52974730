//! Empirical Christoffel function `z(x)^T M^-1 z(x)` over a monomial basis,
//! used as a baseline nonconformity score.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::StateScorer;
use crate::datastore::Dataset;
use crate::error::{Error, Result};

/// Exponent tuples of all monomials in `n` variables with total degree at
/// most `d`, in graded lexicographic order.
pub fn monomial_exponents(n: usize, d: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(n, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for deg in 0..=d as u32 {
        rec(n, deg, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// `C(n + d, d)`.
pub fn basis_dim(n: usize, d: usize) -> usize {
    (1..=d).fold(1usize, |acc, i| acc * (n + i) / i)
}

/// Monomial feature vector of `x` up to total degree `d`.
pub fn monomial_basis(x: &[f64], d: usize) -> Vec<f64> {
    Basis::new(x.len(), d).eval(x)
}

#[derive(Debug, Clone)]
struct Basis {
    n: usize,
    d: usize,
    exps: Vec<Vec<u32>>,
}

impl Basis {
    fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            exps: monomial_exponents(n, d),
        }
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut pows = vec![1.0; self.n * (self.d + 1)];
        for (i, &xi) in x.iter().enumerate() {
            for e in 1..=self.d {
                pows[i * (self.d + 1) + e] = pows[i * (self.d + 1) + e - 1] * xi;
            }
        }
        for (o, ex) in out.iter_mut().zip(&self.exps) {
            *o = ex
                .iter()
                .enumerate()
                .map(|(i, &e)| pows[i * (self.d + 1) + e as usize])
                .product();
        }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.exps.len()];
        self.eval_into(x, &mut out);
        out
    }
}

/// Regularization added to the moment matrix diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `1e-10 * tr(M) / basis_dim`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct ChristoffelModel {
    basis: Basis,
    chol: Cholesky<f64, Dyn>,
    pub ridge: f64,
}

pub fn christoffel_fit(samples: &[f64], n: usize, d: usize, ridge: Ridge) -> Result<ChristoffelModel> {
    if n == 0 || samples.is_empty() || samples.len() % n != 0 {
        return Err(Error::Contract(format!("{} sample values for dimension {n}", samples.len())));
    }
    let basis = Basis::new(n, d);
    let m = basis.exps.len();
    let count = samples.len() / n;
    let mut z = DMatrix::<f64>::zeros(m, count);
    for (j, x) in samples.chunks_exact(n).enumerate() {
        basis.eval_into(x, z.column_mut(j).as_mut_slice());
    }
    let mut moment = &z * z.transpose() / count as f64;
    let ridge = match ridge {
        Ridge::Auto => 1e-10 * moment.trace() / m as f64,
        Ridge::Fixed(r) if r >= 0.0 => r,
        Ridge::Fixed(r) => return Err(Error::Config(format!("ridge must be >= 0, got {r}"))),
    };
    for i in 0..m {
        moment[(i, i)] += ridge;
    }
    let chol = moment.cholesky().ok_or_else(|| {
        Error::Numeric(format!(
            "moment matrix of degree {d} is singular (ridge {ridge:e}); increase the ridge"
        ))
    })?;
    Ok(ChristoffelModel { basis, chol, ridge })
}

impl ChristoffelModel {
    pub fn degree(&self) -> usize {
        self.basis.d
    }

    pub fn basis_dim(&self) -> usize {
        self.basis.exps.len()
    }

    /// `z(x)^T M^-1 z(x)`, via one triangular solve.
    pub fn score(&self, x: &[f64]) -> f64 {
        let z = DVector::from_vec(self.basis.eval(x));
        let y = self.chol.l_dirty().solve_lower_triangular(&z).expect("nonzero diagonal");
        y.norm_squared()
    }

    pub fn score_many(&self, xs: &[f64]) -> Vec<f64> {
        let n = self.basis.n;
        let l = self.chol.l();
        xs.par_chunks(n * 256)
            .flat_map_iter(|chunk| {
                let b = chunk.len() / n;
                let mut z = DMatrix::<f64>::zeros(self.basis_dim(), b);
                for (j, x) in chunk.chunks_exact(n).enumerate() {
                    self.basis.eval_into(x, z.column_mut(j).as_mut_slice());
                }
                l.solve_lower_triangular_mut(&mut z);
                z.column_iter().map(|c| c.norm_squared()).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Per-step Christoffel models fitted on states mapped affinely onto
/// `[-1, 1]^n` (bounds taken from the fitting states at each step).
pub struct ChristoffelScorer {
    pub degree: usize,
    models: Vec<(ChristoffelModel, Vec<f64>, Vec<f64>)>,
}

impl ChristoffelScorer {
    pub fn fit(ds: &Dataset, ids: &[usize], degree: usize, ridge: Ridge) -> Result<Self> {
        let n = ds.dim();
        let models = (0..ds.steps())
            .map(|k| {
                let mut rows = ds.rows_at(ids, k);
                let (lo, hi) = bounds(&rows, n);
                scale_rows(&mut rows, &lo, &hi);
                let m = christoffel_fit(&rows, n, degree, ridge)?;
                Ok((m, lo, hi))
            })
            .collect::<Result<_>>()?;
        Ok(Self { degree, models })
    }
}

fn bounds(rows: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for r in rows.chunks_exact(n) {
        for i in 0..n {
            lo[i] = lo[i].min(r[i]);
            hi[i] = hi[i].max(r[i]);
        }
    }
    (lo, hi)
}

fn scale_rows(rows: &mut [f64], lo: &[f64], hi: &[f64]) {
    let n = lo.len();
    for r in rows.chunks_exact_mut(n) {
        for i in 0..n {
            let w = (hi[i] - lo[i]).max(1e-12);
            r[i] = 2.0 * (r[i] - lo[i]) / w - 1.0;
        }
    }
}

impl StateScorer for ChristoffelScorer {
    fn dim(&self) -> usize {
        self.models.first().map_or(0, |m| m.1.len())
    }

    fn score_states(&self, states: &[f64], k: usize, _tag: u64, _ids: &[u64]) -> Result<Vec<f64>> {
        let (model, lo, hi) = self
            .models
            .get(k)
            .ok_or_else(|| Error::Contract(format!("no Christoffel model for step {k}")))?;
        let mut rows = states.to_vec();
        scale_rows(&mut rows, lo, hi);
        Ok(model.score_many(&rows))
    }
}
