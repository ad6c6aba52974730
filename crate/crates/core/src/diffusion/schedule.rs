use serde::{Deserialize, Serialize};

use crate::checksum::Crc64Digest;
use crate::error::{Error, Result};

/// Linear variance schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// `beta`, `alpha = 1 - beta` and the running product `alpha_bar`, indexed by
/// diffusion step `tau` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one diffusion step".into()));
    }
    if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
        return Err(Error::Config(format!(
            "schedule requires 0 < beta_start <= beta_end < 1, got {beta1} and {beta_t}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta1
            } else {
                beta1 + (beta_t - beta1) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, tau: usize) -> usize {
        assert!(
            tau >= 1 && tau <= self.steps(),
            "diffusion step {tau} outside 1..={}",
            self.steps()
        );
        tau - 1
    }

    pub fn beta(&self, tau: usize) -> f64 {
        self.beta[self.check(tau)]
    }

    pub fn alpha(&self, tau: usize) -> f64 {
        self.alpha[self.check(tau)]
    }

    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[self.check(tau)]
    }

    /// `alpha_bar / (1 - alpha_bar)`.
    pub fn snr(&self, tau: usize) -> f64 {
        let ab = self.alpha_bar(tau);
        ab / (1.0 - ab)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut d = Crc64Digest::new();
        for b in &self.beta {
            d.update(&b.to_le_bytes());
        }
        d.finalize()
    }
}

/// `sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps`.
pub fn noisify(x0: &[f64], tau: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(tau);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn defaults_match_canonical_depth() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 0.7);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        assert!(make_schedule(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn noisify_edge_cases() {
        let s = ScheduleConfig::default().build().unwrap();
        let ab = s.alpha_bar(5);
        assert_eq!(noisify(&[2.0, -1.0], 5, &[0.0, 0.0], &s), vec![2.0 * ab.sqrt(), -ab.sqrt()]);
        assert_eq!(noisify(&[0.0, 0.0], 5, &[1.0, 0.0], &s), vec![(1.0 - ab).sqrt(), 0.0]);
    }

    #[test]
    fn noisified_variance_matches_schedule() {
        let s = ScheduleConfig::default().build().unwrap();
        let tau = 400;
        let mut rng = stream(3, &[]);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                noisify(&[1.5], tau, &[e], &s)[0]
            })
            .collect();
        let var = crate::util::variance(&xs);
        let want = 1.0 - s.alpha_bar(tau);
        assert!((var / want - 1.0).abs() < 0.02, "{var} vs {want}");
    }

    proptest! {
        #[test]
        fn alpha_bar_is_decreasing_product(b1 in 1e-6f64..0.2, span in 0.0f64..0.5, t in 1usize..300) {
            let bt = (b1 + span).min(0.99);
            let s = make_schedule(t, b1, bt).unwrap();
            let mut prod = 1.0;
            for tau in 1..=t {
                prod *= 1.0 - s.beta(tau);
                prop_assert!((s.alpha_bar(tau) - prod).abs() < 1e-12);
                prop_assert!(s.beta(tau) > 0.0 && s.beta(tau) < 1.0);
                if tau > 1 {
                    prop_assert!(s.alpha_bar(tau) < s.alpha_bar(tau - 1));
                }
            }
        }
    }
}
