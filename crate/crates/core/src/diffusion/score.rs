use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::checksum::crc64;
use crate::datastore::Normalizer;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

/// A noise-prediction network `eps_theta(x_tau, tau, k)`.
pub trait NoisePredictor: Sync {
    fn dim(&self) -> usize;

    /// Predicts the noise for every row of `x_tau` (row-major, `dim()`
    /// columns). All rows share diffusion step `tau` and physical step `k`.
    fn predict(&self, x_tau: &[f64], tau: usize, k: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1 / M` for every evaluation.
    Uniform,
    /// Proportional to `beta / (1 - alpha_bar)`, normalized over the chosen steps.
    Elbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub taus: Vec<usize>,
    pub repeats: usize,
    pub weighting: Weighting,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            taus: vec![1, 2, 3],
            repeats: 8,
            weighting: Weighting::Uniform,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.taus.is_empty() || self.repeats == 0 {
            return Err(Error::Config("score needs at least one diffusion step and one repeat".into()));
        }
        if let Some(t) = self.taus.iter().find(|&&t| t == 0 || t > schedule.steps()) {
            return Err(Error::Config(format!(
                "score diffusion step {t} outside 1..={}",
                schedule.steps()
            )));
        }
        Ok(())
    }

    pub fn evaluations(&self) -> usize {
        self.taus.len() * self.repeats
    }

    /// Weight of a single evaluation at each entry of `taus`; summed over all
    /// `M` evaluations the weights add to one.
    pub fn weights(&self, schedule: &NoiseSchedule) -> Vec<f64> {
        let r = self.repeats as f64;
        match self.weighting {
            Weighting::Uniform => vec![1.0 / self.evaluations() as f64; self.taus.len()],
            Weighting::Elbo => {
                let raw: Vec<f64> = self
                    .taus
                    .iter()
                    .map(|&t| schedule.beta(t) / (1.0 - schedule.alpha_bar(t)))
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|w| w / total / r).collect()
            }
        }
    }

    pub fn fingerprint(&self) -> u64 {
        crc64(&serde_json::to_vec(self).expect("score config serializes"))
    }
}

/// Scores normalized states `z` (row-major) at physical step `k`; query `j`
/// draws its noise from `rngs[j]` in (tau, repeat, dimension) order.
pub(crate) fn score_normalized<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    cfg: &ScoreConfig,
    z: &[f64],
    k: usize,
    rngs: &mut [StreamRng],
) -> Vec<f64> {
    let n = model.dim();
    let b = rngs.len();
    let r = cfg.repeats;
    let per_query = cfg.evaluations() * n;
    let mut eps = vec![0.0; b * per_query];
    for (rng, e) in rngs.iter_mut().zip(eps.chunks_exact_mut(per_query)) {
        e.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }
    let weights = cfg.weights(schedule);
    let mut scores = vec![0.0; b];
    let mut x_tau = vec![0.0; b * r * n];
    for (ti, &tau) in cfg.taus.iter().enumerate() {
        let ab = schedule.alpha_bar(tau);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for q in 0..b {
            let x0 = &z[q * n..(q + 1) * n];
            for rep in 0..r {
                let e = &eps[q * per_query + (ti * r + rep) * n..][..n];
                let row = &mut x_tau[(q * r + rep) * n..][..n];
                for d in 0..n {
                    row[d] = sa * x0[d] + sn * e[d];
                }
            }
        }
        let pred = model.predict(&x_tau, tau, k);
        for q in 0..b {
            let mut acc = 0.0;
            for rep in 0..r {
                let e = &eps[q * per_query + (ti * r + rep) * n..][..n];
                let p = &pred[(q * r + rep) * n..][..n];
                acc += e.iter().zip(p).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            }
            scores[q] += weights[ti] * acc;
        }
    }
    scores
}

/// Reconstruction-error score of a single unnormalized state.
pub fn score<P: NoisePredictor + ?Sized, R: Rng>(
    x: &[f64],
    k: usize,
    model: &P,
    schedule: &NoiseSchedule,
    cfg: &ScoreConfig,
    normalizer: &Normalizer,
    rng: &mut R,
) -> Result<f64> {
    let z = normalizer.apply(x);
    let mut stream = StreamRng::from_rng(rng);
    let s = score_normalized(model, schedule, cfg, &z, k, std::slice::from_mut(&mut stream))[0];
    if !s.is_finite() {
        return Err(Error::Numeric(format!("non-finite score {s} at step {k}")));
    }
    Ok(s)
}

const CHUNK: usize = 64;

/// Denoiser, schedule, score configuration and normalizer bundled for
/// scoring batches of states with per-query streams
/// `stream(seed, [tag, k, id])`.
pub struct DiffusionScorer<P> {
    pub model: P,
    pub schedule: NoiseSchedule,
    pub config: ScoreConfig,
    pub normalizer: Normalizer,
    pub seed: u64,
}

impl<P: NoisePredictor> DiffusionScorer<P> {
    pub fn new(model: P, schedule: NoiseSchedule, config: ScoreConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate(&schedule)?;
        if normalizer.dim() != model.dim() {
            return Err(Error::Contract(format!(
                "normalizer has {} dimensions, model {}",
                normalizer.dim(),
                model.dim()
            )));
        }
        Ok(Self {
            model,
            schedule,
            config,
            normalizer,
            seed,
        })
    }

    /// Noise stream of query `id`. It does not depend on the step, so a
    /// trajectory sees the same diffusion noise at every `k`.
    pub fn query_stream(&self, tag: u64, id: u64) -> StreamRng {
        stream(self.seed, &[tag, id])
    }

    /// Scores unnormalized `states` (row-major) at step `k`. Row `j` uses the
    /// stream of query id `ids[j]`, so equal ids share noise draws.
    pub fn score_states(&self, states: &[f64], k: usize, tag: u64, ids: &[u64]) -> Result<Vec<f64>> {
        let n = self.model.dim();
        if states.len() != ids.len() * n {
            return Err(Error::Contract(format!(
                "{} values for {} queries of dimension {n}",
                states.len(),
                ids.len()
            )));
        }
        let mut z = states.to_vec();
        self.normalizer.apply_rows(&mut z);
        let scores: Vec<f64> = z
            .par_chunks(CHUNK * n)
            .zip(ids.par_chunks(CHUNK))
            .flat_map_iter(|(zc, ic)| {
                let mut rngs: Vec<StreamRng> = ic.iter().map(|&id| self.query_stream(tag, id)).collect();
                score_normalized(&self.model, &self.schedule, &self.config, zc, k, &mut rngs)
            })
            .collect();
        if let Some(j) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite score for query {} at step {k}",
                ids[j]
            )));
        }
        Ok(scores)
    }
}
