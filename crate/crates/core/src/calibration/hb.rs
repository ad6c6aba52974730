//! Hoeffding-Bentkus p-values for the hypothesis "risk > alpha".
//!
//! Binomial probabilities use Loader's saddle-point expansion
//! (`stirlerr`/`bd0`), which keeps relative accuracy near machine precision
//! where naive `lgamma` differences lose several digits.

use std::f64::consts::{E, PI};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let ln_fact: f64 = (2..=n as u64).map(|k| (k as f64).ln()).sum();
        if n == 0.0 {
            return 0.0;
        }
        return ln_fact - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * PI).ln();
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        return s;
    }
    x * (x / np).ln() + np - x
}

/// `P[Bin(n, p) = x]`.
pub fn binom_pmf(x: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if x > n {
        return 0.0;
    }
    if p == 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let (xf, nf) = (x as f64, n as f64);
    if x == 0 {
        if n == 0 {
            return 1.0;
        }
        let lc = if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * q.ln() };
        return lc.exp();
    }
    if x == n {
        let lc = if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let lc = stirlerr(nf) - stirlerr(xf) - stirlerr(nf - xf) - bd0(xf, nf * p) - bd0(nf - xf, nf * q);
    let lf = LN_2PI + xf.ln() + (-xf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// `h1(a, b) = a ln(a/b) + (1-a) ln((1-a)/(1-b))` with `0 ln 0 = 0`.
fn h1(a: f64, b: f64) -> f64 {
    let t1 = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    let t2 = if a < 1.0 { (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln() } else { 0.0 };
    t1 + t2
}

/// Hoeffding term `exp(-n h1(min(r, alpha), alpha))`.
pub fn hoeffding_term(r_hat: f64, n: u64, alpha: f64) -> f64 {
    let a = r_hat.min(alpha);
    if a >= alpha {
        return 1.0;
    }
    (-(n as f64) * h1(a, alpha)).exp()
}

/// Number of exceedances `ceil(n r)`, snapping to the nearest integer when
/// `n r` is integral up to rounding.
pub fn exceedance_count(r_hat: f64, n: u64) -> u64 {
    let x = r_hat * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * (n as f64).max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Hoeffding-Bentkus p-value for an empirical risk `r_hat` over `n` samples.
pub fn hb_pvalue(r_hat: f64, n: u64, alpha: f64) -> f64 {
    HbTable::new(n, alpha).pvalue(exceedance_count(r_hat, n))
}

/// Cached p-values for every exceedance count `0..=n` at fixed `(n, alpha)`.
#[derive(Debug, Clone)]
pub struct HbTable {
    n: u64,
    alpha: f64,
    /// `P[Bin(n, alpha) <= c]`, compensated running sums.
    cdf: Vec<f64>,
}

impl HbTable {
    pub fn new(n: u64, alpha: f64) -> Self {
        assert!(n >= 1, "p-value needs n >= 1");
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
        let mut cdf = Vec::with_capacity(n as usize + 1);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for i in 0..=n {
            // e * cdf >= 1 from here on: the Bentkus term no longer matters
            if E * sum >= 1.0 {
                cdf.push(sum);
                continue;
            }
            let t = binom_pmf(i, n, alpha);
            let s = sum + t;
            comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
            sum = s;
            cdf.push(sum + comp);
        }
        Self { n, alpha, cdf }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pvalue(&self, count: u64) -> f64 {
        let count = count.min(self.n);
        let r = count as f64 / self.n as f64;
        let hoeffding = hoeffding_term(r, self.n, self.alpha);
        let bentkus = E * self.cdf[count as usize];
        clip(hoeffding.min(bentkus))
    }
}

/// Smallest `n` for which zero observed exceedances pass at `budget`:
/// `ceil(ln budget / ln(1 - alpha))`.
pub fn min_samples_for_zero_risk(alpha: f64, budget: f64) -> usize {
    (budget.ln() / (1.0 - alpha).ln()).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_risk_hundred_samples() {
        let h = 0.95f64.powi(100);
        assert!((hoeffding_term(0.0, 100, 0.05) - h).abs() < 1e-15);
        assert!((h - 5.92e-3).abs() < 1e-5);
        let b = E * binom_pmf(0, 100, 0.05);
        assert!((b - 1.61e-2).abs() < 1e-4);
        assert!((hb_pvalue(0.0, 100, 0.05) - h).abs() < 1e-15);
    }

    #[test]
    fn hoeffding_term_at_five_percent_of_two_hundred() {
        let h = hoeffding_term(0.05, 200, 0.10);
        assert!((h - 3.54e-2).abs() < 5e-5, "{h}");
        assert!(hb_pvalue(0.05, 200, 0.10) <= h);
    }

    #[test]
    fn risk_above_alpha_leaves_only_bentkus() {
        assert_eq!(hoeffding_term(0.3, 50, 0.1), 1.0);
        assert!(hb_pvalue(0.3, 50, 0.1) <= 1.0);
        assert_eq!(hb_pvalue(1.0, 50, 0.1), 1.0);
    }

    #[test]
    fn pmf_matches_small_exact_values() {
        // C(10,3) 0.2^3 0.8^7
        let exact = 120.0 * 0.008 * 0.8f64.powi(7);
        assert!((binom_pmf(3, 10, 0.2) / exact - 1.0).abs() < 1e-14);
        let total: f64 = (0..=40).map(|i| binom_pmf(i, 40, 0.37)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stirlerr_branches_are_continuous() {
        // series and direct evaluation agree where both are valid
        for n in [16.0f64, 36.0, 81.0, 120.0] {
            let direct = {
                let ln_fact: f64 = (2..=n as u64).map(|k| (k as f64).ln()).sum();
                ln_fact - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * PI).ln()
            };
            assert!((stirlerr(n) - direct).abs() < 1e-12, "{n}");
        }
    }

    #[test]
    fn ninety_eight_samples_needed_at_default_budget() {
        assert_eq!(min_samples_for_zero_risk(0.05, 0.2 / 30.0), 98);
        assert!(hb_pvalue(0.0, 98, 0.05) <= 0.2 / 30.0);
        assert!(hb_pvalue(0.0, 97, 0.05) > 0.2 / 30.0);
    }

    #[test]
    fn integral_counts_are_recovered() {
        assert_eq!(exceedance_count(3.0 / 7.0, 7), 3);
        assert_eq!(exceedance_count(0.1, 10), 1);
        assert_eq!(exceedance_count(0.15, 10), 2);
    }

    proptest! {
        #[test]
        fn pvalue_is_monotone_in_risk(n in 1u64..3000, a in 0.001f64..0.999, u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let t = HbTable::new(n, a);
            let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
            let (cl, ch) = (exceedance_count(lo, n), exceedance_count(hi, n));
            prop_assert!(t.pvalue(cl) <= t.pvalue(ch));
        }
    }
}
