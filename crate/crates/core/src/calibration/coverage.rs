//! Synthetic coverage oracle: states uniform on `[-1, 1]^2`, score = sup-norm
//! distance from the origin. The true miss rate of a threshold `q` is
//! `1 - q^2` on `[0, 1]`, so every calibration draw can be checked exactly.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{calibrate_scores, RiskBudget};
use crate::error::Result;
use crate::rng::{stream, tag};

/// Score of a state in the oracle setup.
pub fn oracle_score(x: [f64; 2]) -> f64 {
    x[0].abs().max(x[1].abs())
}

/// Exact probability that a fresh state scores above `q`.
pub fn oracle_miss_rate(q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    1.0 - q * q
}

/// Scores of `n` oracle states per step, `out[k][j]`.
pub fn oracle_scores(steps: usize, n: usize, seed: u64, draw: u64) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|k| {
            let mut rng = stream(seed, &[tag::COVERAGE, draw, k as u64]);
            (0..n)
                .map(|_| oracle_score([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub draws: usize,
    /// Draws in which the true miss rate exceeded alpha at some step.
    pub violations: usize,
    /// Draws whose calibration found no threshold.
    pub infeasible: usize,
    pub worst_miss_rate: f64,
}

impl CoverageReport {
    pub fn violation_rate(&self) -> f64 {
        self.violations as f64 / self.draws as f64
    }
}

/// Calibrates `draws` independent oracle samples of `n` states per step and
/// counts draws whose exact miss rate exceeds alpha at any step. An
/// infeasible calibration counts as a violation.
pub fn coverage_simulation(budget: &RiskBudget, n: usize, grid_size: usize, draws: usize, seed: u64) -> Result<CoverageReport> {
    budget.validate()?;
    let outcomes: Vec<Option<f64>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let scores = oracle_scores(budget.steps, n, seed, d as u64);
            let q = calibrate_scores(&scores, budget, grid_size).and_then(|c| c.thresholds()).ok()?;
            Some(q.iter().map(|&q| oracle_miss_rate(q)).fold(0.0, f64::max))
        })
        .collect();
    let infeasible = outcomes.iter().filter(|o| o.is_none()).count();
    let violations = outcomes.iter().filter(|o| o.is_none_or(|m| m > budget.alpha)).count();
    let worst_miss_rate = outcomes.iter().flatten().copied().fold(0.0, f64::max);
    Ok(CoverageReport {
        draws,
        violations,
        infeasible,
        worst_miss_rate,
    })
}
