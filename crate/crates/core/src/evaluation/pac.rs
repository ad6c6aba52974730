use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FnrReport;
use crate::calibration::{calibrate_scores, RiskBudget};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Outcome of one calibration/test re-split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub cal_n: usize,
    pub test_n: usize,
    pub thresholds: Vec<f64>,
    pub fnr: Vec<f64>,
    pub max_fnr: Option<f64>,
    pub passed: bool,
    /// Why the split failed before measuring FNR.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacReport {
    pub alpha: f64,
    pub seed: u64,
    pub pass_rate: f64,
    pub splits: Vec<SplitRecord>,
}

/// Re-split `index` of a score pool (`pool[k][j]` = score of member `j` at
/// step `k`): a seeded permutation puts the first half in calibration and
/// the rest in test.
pub fn pac_split(pool: &[Vec<f64>], budget: &RiskBudget, grid_size: usize, seed: u64, index: usize) -> SplitRecord {
    let n = pool.first().map_or(0, Vec::len);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, &[tag::PAC, index as u64]));
    let (cal, test) = perm.split_at(n / 2);
    let pick = |ids: &[usize]| -> Vec<Vec<f64>> { pool.iter().map(|s| ids.iter().map(|&j| s[j]).collect()).collect() };
    let mut record = SplitRecord {
        index,
        cal_n: cal.len(),
        test_n: test.len(),
        thresholds: Vec::new(),
        fnr: Vec::new(),
        max_fnr: None,
        passed: false,
        reason: None,
    };
    let measured = calibrate_scores(&pick(cal), budget, grid_size)
        .and_then(|c| c.thresholds())
        .and_then(|q| FnrReport::from_scores(&pick(test), &q).map(|r| (q, r)));
    match measured {
        Ok((q, r)) => {
            record.passed = r.max <= budget.alpha;
            record.thresholds = q;
            record.fnr = r.per_step;
            record.max_fnr = Some(r.max);
        }
        Err(e) => record.reason = Some(e.to_string()),
    }
    record
}

/// Repeats [`pac_split`] `n_splits` times; the pass rate counts splits whose
/// horizon-max FNR is within `alpha`. Failed calibrations count as failures.
pub fn pac_validate(pool: &[Vec<f64>], budget: &RiskBudget, grid_size: usize, n_splits: usize, seed: u64) -> Result<PacReport> {
    budget.validate()?;
    let n = pool.first().map_or(0, Vec::len);
    if n < 2 || pool.iter().any(|s| s.len() != n) {
        return Err(Error::Contract(format!("score pool needs >= 2 members at every step, got {n}")));
    }
    if n_splits == 0 {
        return Err(Error::Config("pac validation needs at least one split".into()));
    }
    let splits: Vec<SplitRecord> = (0..n_splits)
        .into_par_iter()
        .map(|i| pac_split(pool, budget, grid_size, seed, i))
        .collect();
    let pass_rate = splits.iter().filter(|s| s.passed).count() as f64 / n_splits as f64;
    Ok(PacReport {
        alpha: budget.alpha,
        seed,
        pass_rate,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pool(steps: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[]);
        (0..steps).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn replaying_a_split_reproduces_its_record() {
        let p = pool(3, 600, 1);
        let b = RiskBudget::new(0.1, 0.2, 3).unwrap();
        let rep = pac_validate(&p, &b, 200, 10, 42).unwrap();
        assert_eq!(pac_split(&p, &b, 200, 42, 7), rep.splits[7]);
    }

    #[test]
    fn single_split_is_plain_fnr() {
        let p = pool(2, 400, 2);
        let b = RiskBudget::new(0.1, 0.2, 2).unwrap();
        let rep = pac_validate(&p, &b, 100, 1, 5).unwrap();
        let r = &rep.splits[0];
        let mut perm: Vec<usize> = (0..400).collect();
        perm.shuffle(&mut stream(5, &[tag::PAC, 0]));
        let test: Vec<Vec<f64>> = p.iter().map(|s| perm[200..].iter().map(|&j| s[j]).collect()).collect();
        let direct = FnrReport::from_scores(&test, &r.thresholds).unwrap();
        assert_eq!(r.max_fnr, Some(direct.max));
        assert_eq!(rep.pass_rate, if direct.max <= 0.1 { 1.0 } else { 0.0 });
    }

    #[test]
    fn infeasible_split_is_recorded() {
        let p = pool(30, 60, 3);
        let b = RiskBudget::new(0.05, 0.2, 30).unwrap();
        let rep = pac_validate(&p, &b, 100, 3, 0).unwrap();
        assert_eq!(rep.pass_rate, 0.0);
        assert!(rep.splits.iter().all(|s| s.reason.as_deref().unwrap().contains("infeasible")));
    }

    #[test]
    fn exchangeable_scores_pass_often() {
        let p = pool(1, 4000, 4);
        let b = RiskBudget::new(0.05, 0.2, 1).unwrap();
        let rep = pac_validate(&p, &b, 1000, 200, 9).unwrap();
        assert!(rep.pass_rate >= 0.8, "{}", rep.pass_rate);
        // uniform scores: the true miss rate of threshold q is 1 - q
        let covered = rep.splits.iter().filter(|s| 1.0 - s.thresholds[0] <= 0.05).count();
        assert!(covered as f64 >= 0.8 * 200.0, "{covered}");
    }
}
