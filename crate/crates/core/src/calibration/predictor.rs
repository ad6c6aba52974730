use super::CalibrationResult;
use crate::checksum::Crc64Digest;
use crate::diffusion::{DiffusionScorer, NoisePredictor};
use crate::error::{Error, Result};

/// A nonconformity score over raw (unnormalized) states. Query `ids[j]`
/// together with `tag` selects the random stream of row `j`, so scores are
/// reproducible and independent of batching.
pub trait StateScorer: Sync {
    fn dim(&self) -> usize;

    fn score_states(&self, states: &[f64], k: usize, tag: u64, ids: &[u64]) -> Result<Vec<f64>>;

    /// Checksum of everything that determines the scores, if available.
    fn fingerprint(&self) -> Option<u64> {
        None
    }
}

impl<P: NoisePredictor> StateScorer for DiffusionScorer<P> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn score_states(&self, states: &[f64], k: usize, tag: u64, ids: &[u64]) -> Result<Vec<f64>> {
        DiffusionScorer::score_states(self, states, k, tag, ids)
    }

    fn fingerprint(&self) -> Option<u64> {
        let mut d = Crc64Digest::new();
        d.update(&self.config.fingerprint().to_le_bytes());
        d.update(&self.schedule.fingerprint().to_le_bytes());
        d.update(&self.seed.to_le_bytes());
        Some(d.finalize())
    }
}

/// Calibrated predicted reachable sets `{x : s(x, k) <= q_k}`.
pub struct ReachPredictor<S> {
    pub scorer: S,
    pub calibration: CalibrationResult,
    thresholds: Vec<f64>,
}

impl<S: StateScorer> ReachPredictor<S> {
    pub fn new(scorer: S, calibration: CalibrationResult) -> Result<Self> {
        let thresholds = calibration.thresholds()?;
        Ok(Self {
            scorer,
            calibration,
            thresholds,
        })
    }

    pub fn steps(&self) -> usize {
        self.thresholds.len()
    }

    pub fn threshold(&self, k: usize) -> Result<f64> {
        self.thresholds
            .get(k)
            .copied()
            .ok_or_else(|| Error::Contract(format!("step {k} is not calibrated ({} steps)", self.thresholds.len())))
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Whether `x` lies in the predicted set at step `k`, and its score.
    pub fn membership(&self, x: &[f64], k: usize, tag: u64, id: u64) -> Result<(bool, f64)> {
        let q = self.threshold(k)?;
        let s = self.scorer.score_states(x, k, tag, &[id])?[0];
        Ok((s <= q, s))
    }

    /// Batched [`ReachPredictor::membership`]: returns (accepted, scores).
    pub fn classify(&self, states: &[f64], k: usize, tag: u64, ids: &[u64]) -> Result<(Vec<bool>, Vec<f64>)> {
        let q = self.threshold(k)?;
        let scores = self.scorer.score_states(states, k, tag, ids)?;
        Ok((scores.iter().map(|&s| s <= q).collect(), scores))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_scores, RiskBudget};

    /// Score = first coordinate.
    struct FirstCoord;
    impl StateScorer for FirstCoord {
        fn dim(&self) -> usize {
            1
        }
        fn score_states(&self, states: &[f64], _: usize, _: u64, _: &[u64]) -> Result<Vec<f64>> {
            Ok(states.to_vec())
        }
    }

    fn predictor() -> (ReachPredictor<FirstCoord>, Vec<f64>) {
        let scores: Vec<f64> = (0..400).map(|i| i as f64 / 400.0).collect();
        let cal = calibrate_scores(&[scores.clone()], &RiskBudget::new(0.1, 0.2, 1).unwrap(), 2000).unwrap();
        (ReachPredictor::new(FirstCoord, cal).unwrap(), scores)
    }

    #[test]
    fn boundary_is_inclusive() {
        let (p, _) = predictor();
        let q = p.threshold(0).unwrap();
        assert!(p.membership(&[q], 0, 0, 0).unwrap().0);
        assert!(!p.membership(&[q + 1e-9], 0, 0, 0).unwrap().0);
        assert!(p.membership(&[-1.0], 0, 0, 0).unwrap().0);
    }

    #[test]
    fn calibration_points_below_threshold_are_accepted() {
        let (p, scores) = predictor();
        let q = p.threshold(0).unwrap();
        let best = scores.iter().copied().filter(|&s| s <= q).fold(f64::MIN, f64::max);
        assert!(p.membership(&[best], 0, 0, 0).unwrap().0);
    }

    #[test]
    fn uncalibrated_step_is_a_contract_violation() {
        let (p, _) = predictor();
        assert!(matches!(p.membership(&[0.0], 1, 0, 0), Err(Error::Contract(_))));
    }
}
