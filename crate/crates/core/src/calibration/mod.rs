//! Learn-Then-Test threshold selection and the calibrated membership test.

mod coverage;
mod hb;
mod predictor;

pub use coverage::{coverage_simulation, oracle_miss_rate, oracle_score, oracle_scores, CoverageReport};
pub use hb::{binom_pmf, exceedance_count, hb_pvalue, hoeffding_term, min_samples_for_zero_risk, HbTable};
pub use predictor::{ReachPredictor, StateScorer};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checksum::hex;
use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::rng::tag;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskBudget {
    pub alpha: f64,
    pub delta: f64,
    /// Number of time steps sharing `delta`.
    pub steps: usize,
}

impl RiskBudget {
    pub fn new(alpha: f64, delta: f64, steps: usize) -> Result<Self> {
        let b = Self { alpha, delta, steps };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.steps == 0 {
            return Err(Error::Config("risk budget needs at least one step".into()));
        }
        Ok(())
    }

    /// `delta / K`.
    pub fn per_step(&self) -> f64 {
        self.delta / self.steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub k: usize,
    pub values: Vec<f64>,
}

/// Fraction of `scores` strictly above `lambda`.
pub fn empirical_risk(scores: &[f64], lambda: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Contract("empirical risk of an empty score set".into()));
    }
    Ok(scores.iter().filter(|&&s| s > lambda).count() as f64 / scores.len() as f64)
}

/// `size` equally spaced thresholds from the smallest to the largest score.
pub fn build_grid(scores: &[f64], k: usize, size: usize) -> Result<ThresholdGrid> {
    if size < 2 {
        return Err(Error::Config(format!("threshold grid needs L >= 2, got {size}")));
    }
    if scores.is_empty() {
        return Err(Error::Contract(format!("no calibration scores at step {k}")));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(Error::DegenerateGrid { k, value: lo });
    }
    let step = (hi - lo) / (size - 1) as f64;
    let mut values: Vec<f64> = (0..size).map(|l| lo + step * l as f64).collect();
    values[size - 1] = hi;
    Ok(ThresholdGrid { k, values })
}

/// Index of the smallest grid value whose p-value is within `budget`.
/// `p_values` must be non-increasing along the grid.
pub fn select_index(p_values: &[f64], budget: f64) -> Option<usize> {
    let i = p_values.partition_point(|&p| p > budget);
    (i < p_values.len()).then_some(i)
}

/// Smallest grid value `q` with `p(q) <= budget`, found by binary search over
/// the monotone p-values.
pub fn select_threshold(grid: &ThresholdGrid, scores: &[f64], alpha: f64, budget: f64) -> Option<f64> {
    let sorted = sorted(scores);
    let table = HbTable::new(scores.len() as u64, alpha);
    let p_at = |l: usize| table.pvalue(count_above(&sorted, grid.values[l]));
    let (mut lo, mut hi) = (0usize, grid.values.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if p_at(mid) <= budget {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    grid.values.get(lo).copied()
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn count_above(sorted: &[f64], lambda: f64) -> u64 {
    (sorted.len() - sorted.partition_point(|&s| s <= lambda)) as u64
}

/// Audit record of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCalibration {
    pub k: usize,
    pub n: usize,
    pub grid: Vec<f64>,
    pub empirical_risks: Vec<f64>,
    pub p_values: Vec<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub budget: RiskBudget,
    pub grid_size: usize,
    pub steps: Vec<StepCalibration>,
    /// Checksums of the score configuration and model that produced the
    /// scores (hex), if known.
    pub score_fingerprint: Option<String>,
    pub model_fingerprint: Option<String>,
}

/// Calibrates a single step: evaluates risk and p-value at every grid point.
pub fn calibrate_step(scores: &[f64], k: usize, budget: &RiskBudget, grid_size: usize) -> Result<StepCalibration> {
    let grid = build_grid(scores, k, grid_size)?;
    let n = scores.len();
    let sorted = sorted(scores);
    let table = HbTable::new(n as u64, budget.alpha);
    let counts: Vec<u64> = grid.values.iter().map(|&l| count_above(&sorted, l)).collect();
    let empirical_risks = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let p_values: Vec<f64> = counts.iter().map(|&c| table.pvalue(c)).collect();
    let threshold = select_index(&p_values, budget.per_step()).map(|i| grid.values[i]);
    Ok(StepCalibration {
        k,
        n,
        grid: grid.values,
        empirical_risks,
        p_values,
        threshold,
    })
}

/// Runs [`calibrate_step`] for every step; `scores[k]` holds the calibration
/// scores at step `k`.
pub fn calibrate_scores(scores: &[Vec<f64>], budget: &RiskBudget, grid_size: usize) -> Result<CalibrationResult> {
    budget.validate()?;
    if scores.len() != budget.steps {
        return Err(Error::Contract(format!(
            "{} steps of scores for a budget over {} steps",
            scores.len(),
            budget.steps
        )));
    }
    let steps = scores
        .iter()
        .enumerate()
        .map(|(k, s)| calibrate_step(s, k, budget, grid_size))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = steps.iter().find(|s| s.threshold.is_none()) {
        return Err(Error::CalibrationInfeasible {
            k: s.k,
            n: s.n,
            budget: budget.per_step(),
            min_n: min_samples_for_zero_risk(budget.alpha, budget.per_step()),
        });
    }
    Ok(CalibrationResult {
        budget: *budget,
        grid_size,
        steps,
        score_fingerprint: None,
        model_fingerprint: None,
    })
}

/// Scores the calibration trajectories at every step with `scorer` and
/// calibrates. Query ids are trajectory indices under the calibration tag.
pub fn calibrate_all<S: StateScorer + ?Sized>(
    ds: &Dataset,
    cal_ids: &[usize],
    scorer: &S,
    budget: &RiskBudget,
    grid_size: usize,
) -> Result<CalibrationResult> {
    let scores = score_split(ds, cal_ids, scorer, tag::CALIBRATION)?;
    let mut result = calibrate_scores(&scores, budget, grid_size)?;
    result.score_fingerprint = scorer.fingerprint().map(hex);
    Ok(result)
}

/// Scores of trajectories `ids` at every step, `out[k][j]` for `ids[j]`.
pub fn score_split<S: StateScorer + ?Sized>(ds: &Dataset, ids: &[usize], scorer: &S, stream_tag: u64) -> Result<Vec<Vec<f64>>> {
    let qids: Vec<u64> = ids.iter().map(|&i| i as u64).collect();
    (0..ds.steps())
        .map(|k| scorer.score_states(&ds.rows_at(ids, k), k, stream_tag, &qids))
        .collect()
}

impl CalibrationResult {
    /// Selected `q_k` for every step.
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        self.steps
            .iter()
            .map(|s| {
                s.threshold.ok_or(Error::CalibrationInfeasible {
                    k: s.k,
                    n: s.n,
                    budget: self.budget.per_step(),
                    min_n: min_samples_for_zero_risk(self.budget.alpha, self.budget.per_step()),
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_risk_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_risk(&s, 2.5).unwrap(), 0.5);
        assert_eq!(empirical_risk(&s, 4.0).unwrap(), 0.0);
        assert_eq!(empirical_risk(&s, 0.5).unwrap(), 1.0);
        assert!(empirical_risk(&[], 0.0).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = build_grid(&[10.0, 0.0], 0, 3).unwrap();
        assert_eq!(g.values, vec![0.0, 5.0, 10.0]);
        let g = build_grid(&[0.3, 1.7, 0.9], 0, 2000).unwrap();
        assert_eq!((g.values[0], g.values[1999]), (0.3, 1.7));
        assert!(g.values.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(build_grid(&[2.0, 2.0], 4, 10), Err(Error::DegenerateGrid { k: 4, .. })));
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_index(&[0.5, 0.01, 0.001], 0.02), Some(1));
        assert_eq!(select_index(&[0.5, 0.4], 0.02), None);
    }

    #[test]
    fn binary_search_agrees_with_full_scan() {
        let scores: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 / 10.0).collect();
        let budget = RiskBudget::new(0.05, 0.2, 30).unwrap();
        let step = calibrate_step(&scores, 0, &budget, 2000).unwrap();
        let grid = ThresholdGrid { k: 0, values: step.grid.clone() };
        assert_eq!(select_threshold(&grid, &scores, 0.05, budget.per_step()), step.threshold);
        assert!(step.empirical_risks.windows(2).all(|w| w[0] >= w[1]));
        assert!(step.p_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn too_few_samples_is_infeasible_with_hint() {
        let scores: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let budget = RiskBudget::new(0.05, 0.2, 30).unwrap();
        match calibrate_scores(&vec![scores; 30], &budget, 100) {
            Err(Error::CalibrationInfeasible { k: 0, n: 50, min_n: 98, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_step_uses_whole_delta() {
        let b = RiskBudget::new(0.1, 0.2, 1).unwrap();
        assert_eq!(b.per_step(), 0.2);
    }

    #[test]
    fn result_round_trips_through_json() {
        let scores: Vec<f64> = (0..300).map(|i| (i as f64 * 0.61).sin()).collect();
        let b = RiskBudget::new(0.1, 0.2, 2).unwrap();
        let r = calibrate_scores(&[scores.clone(), scores], &b, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cal.json");
        r.save(&p).unwrap();
        assert_eq!(CalibrationResult::load(&p).unwrap(), r);
    }
}
