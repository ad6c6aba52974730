use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::{ReachPredictor, StateScorer};
use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

pub const DEFAULT_SIGMAS: [f64; 8] = [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub sigma: f64,
    pub acceptance: f64,
}

/// Acceptance rate of the states of trajectories `ids` (all steps, each
/// against its own threshold) after adding `sigma * sigma_px * z` noise.
///
/// The base noise `z` of a state and its scoring stream are shared across
/// all `sigmas`, so the curve is a paired comparison.
pub fn sensitivity_curve<S: StateScorer>(
    predictor: &ReachPredictor<S>,
    ds: &Dataset,
    ids: &[usize],
    sigma_px: &[f64],
    sigmas: &[f64],
    seed: u64,
) -> Result<Vec<SensitivityPoint>> {
    let dim = ds.dim();
    if sigma_px.len() != dim {
        return Err(Error::Contract(format!("{} noise scales for dimension {dim}", sigma_px.len())));
    }
    if ids.is_empty() {
        return Err(Error::Contract("sensitivity needs at least one state".into()));
    }
    let qids: Vec<u64> = ids.iter().map(|&i| i as u64).collect();
    let steps = ds.steps();
    let mut accepted = vec![0usize; sigmas.len()];
    for k in 0..steps {
        let clean = ds.rows_at(ids, k);
        let noise: Vec<f64> = ids
            .iter()
            .flat_map(|&i| {
                let mut rng = stream(seed, &[tag::PERTURB, k as u64, i as u64]);
                (0..dim).map(move |_| rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        for (si, &sigma) in sigmas.iter().enumerate() {
            let x: Vec<f64> = clean
                .iter()
                .zip(&noise)
                .enumerate()
                .map(|(j, (c, z))| c + sigma * sigma_px[j % dim] * z)
                .collect();
            let (acc, _) = predictor.classify(&x, k, tag::SENSITIVITY, &qids)?;
            accepted[si] += acc.iter().filter(|&&a| a).count();
        }
    }
    let total = (ids.len() * steps) as f64;
    Ok(sigmas
        .iter()
        .zip(accepted)
        .map(|(&sigma, a)| SensitivityPoint {
            sigma,
            acceptance: a as f64 / total,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_scores, RiskBudget};

    struct Norm;
    impl StateScorer for Norm {
        fn dim(&self) -> usize {
            2
        }
        fn score_states(&self, s: &[f64], _: usize, _: u64, _: &[u64]) -> Result<Vec<f64>> {
            Ok(s.chunks(2).map(|x| x[0].hypot(x[1])).collect())
        }
    }

    #[test]
    fn acceptance_falls_with_noise() {
        let mut rng = stream(1, &[]);
        let n = 1000;
        let states: Vec<f32> = (0..2 * n).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let ds = Dataset::new(states, n, 1, 2, 1.0).unwrap();
        let ids: Vec<usize> = (0..n).collect();
        let scores = Norm.score_states(&ds.rows_at(&ids, 0), 0, 0, &[]).unwrap();
        let cal = calibrate_scores(&[scores], &RiskBudget::new(0.05, 0.2, 1).unwrap(), 500).unwrap();
        let p = ReachPredictor::new(Norm, cal).unwrap();
        let curve = sensitivity_curve(&p, &ds, &ids, &[1.0, 1.0], &DEFAULT_SIGMAS, 3).unwrap();
        assert!(curve[0].acceptance >= 0.95);
        for w in curve.windows(2) {
            assert!(w[1].acceptance <= w[0].acceptance + 0.02);
        }
        assert!(curve.last().unwrap().acceptance < 0.5);
        let again = sensitivity_curve(&p, &ds, &ids, &[1.0, 1.0], &DEFAULT_SIGMAS, 3).unwrap();
        assert_eq!(curve, again);
    }
}
