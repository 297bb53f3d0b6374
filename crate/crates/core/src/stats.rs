//! Just enough statistics for the Monte Carlo checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Identity checks pass when |difference| ≤ this many standard errors.
pub const IDENTITY_SE: f64 = 4.0;
/// Distributional checks pass when p exceeds this level.
pub const DISTRIBUTION_ALPHA: f64 = 0.01;
/// Replicates below this size use permutation p-values in the KS test.
pub const KS_ASYMPTOTIC_MIN: usize = 50;
pub const KS_PERMUTATIONS: usize = 10_000;

/// Running count, mean and sum of squared deviations (Welford).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for SampleSummary {
    fn default() -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl SampleSummary {
    #[must_use]
    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Self::default();
        for &x in xs {
            s.push(x);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    /// Chan et al. pairwise combination.
    #[must_use]
    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let d = other.mean - self.mean;
        Self {
            count: n,
            mean: self.mean + d * nb / n as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / n as f64,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    #[must_use]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two values).
    #[must_use]
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean (0 for fewer than two values).
    #[must_use]
    pub fn standard_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count as f64 * (self.count - 1) as f64)).sqrt()
        }
    }
}

/// Mean and `k`·SE half-width.
pub fn mc_mean_ci(summary: &SampleSummary, k: f64) -> Result<(f64, f64)> {
    if summary.count < 2 {
        return Err(Error::InsufficientData(format!(
            "a confidence interval needs at least 2 values, got {}",
            summary.count
        )));
    }
    Ok((summary.mean, k * summary.standard_error()))
}

/// Sample variance with its standard error from the fourth central moment.
pub fn variance_with_se(xs: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < 4 {
        return Err(Error::InsufficientData("variance SE needs at least 4 values".into()));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    let var = m2 / (nf - 1.0);
    let mu2 = m2 / nf;
    let mu4 = m4 / nf;
    let se = ((mu4 - mu2 * mu2).max(0.0) / nf).sqrt();
    Ok((var, se))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution.
#[must_use]
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let c = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = f64::from(2 * k - 1);
            cdf += (-m * m * pi2 / (8.0 * lambda * lambda)).exp();
        }
        (1.0 - c * cdf).clamp(0.0, 1.0)
    } else {
        let mut q = 0.0;
        for k in 1..=100 {
            let kf = f64::from(k);
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            q += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * q).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov–Smirnov test.
///
/// Asymptotic p-value (with the Stephens small-sample correction) once both
/// samples have at least [`KS_ASYMPTOTIC_MIN`] values, otherwise a
/// permutation p-value from [`KS_PERMUTATIONS`] relabellings.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidParams("KS samples contain NaN".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let d = ks_statistic(&sa, &sb);
    let p_value = if a.len().min(b.len()) >= KS_ASYMPTOTIC_MIN {
        let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
        let sq = ne.sqrt();
        kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
    } else {
        let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 ^ (a.len() as u64) << 20 ^ b.len() as u64);
        let mut hits = 0usize;
        for _ in 0..KS_PERMUTATIONS {
            pooled.shuffle(&mut rng);
            let (x, y) = pooled.split_at_mut(a.len());
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            if ks_statistic(x, y) >= d - 1e-12 {
                hits += 1;
            }
        }
        (hits + 1) as f64 / (KS_PERMUTATIONS + 1) as f64
    };
    Ok(TestResult {
        statistic: d,
        p_value,
    })
}

fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof).expect("positive dof").sf(stat)
}

/// Pearson test of equal cell probabilities.
pub fn chi_square_uniformity(counts: &[u64]) -> Result<TestResult> {
    if counts.len() < 2 {
        return Err(Error::InsufficientData("uniformity test needs at least 2 cells".into()));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    if expected < 5.0 {
        return Err(Error::InsufficientData(format!(
            "expected count per cell is {expected:.2} < 5; raise the number of replicates"
        )));
    }
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_sf(stat, (counts.len() - 1) as f64),
    })
}

/// Pearson test that every row of `table` has the same cell distribution.
pub fn chi_square_homogeneity(table: &[Vec<u64>]) -> Result<TestResult> {
    let rows = table.len();
    if rows < 2 {
        return Err(Error::InsufficientData("homogeneity test needs at least 2 rows".into()));
    }
    let cols = table[0].len();
    if cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParams("rows must share at least 2 columns".into()));
    }
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let total: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            let e = row_tot[i] * col_tot[j] / total;
            if e < 5.0 {
                return Err(Error::InsufficientData(format!(
                    "expected count {e:.2} < 5 in cell ({i}, {j}); raise the number of replicates"
                )));
            }
            let d = c as f64 - e;
            stat += d * d / e;
        }
    }
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_sf(stat, ((rows - 1) * (cols - 1)) as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (0..80).map(f64::from).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = ks_two_sample(&[0.0; 100], &[1.0; 100]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-20);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_small_samples_use_permutations() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5];
        let b = [0.6, 0.7, 0.8, 0.9, 1.0];
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        // two of the C(10,5) = 252 splits separate the samples completely
        assert!((r.p_value - 2.0 / 252.0).abs() < 0.004, "{}", r.p_value);
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn kolmogorov_sf_branches_agree() {
        for l in [1.1, 1.15, 1.18, 1.2, 1.25] {
            let series = {
                let mut q = 0.0;
                for k in 1..=100 {
                    let kf = f64::from(k);
                    let t = (-2.0 * kf * kf * l * l).exp();
                    q += if k % 2 == 1 { t } else { -t };
                }
                2.0 * q
            };
            assert!((kolmogorov_sf(l) - series).abs() < 1e-10);
        }
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn ks_self_calibration() {
        // ±0.01 at 10³ trials is only ~1.45σ, so pool eight blocks of 10³.
        let trials = 8000;
        let mut rejections = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..trials {
            let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            if ks_two_sample(&a, &b).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let frac = f64::from(rejections) / f64::from(trials);
        assert!((frac - 0.05).abs() <= 0.01, "rejection rate {frac}");
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_uniformity(&[10, 10, 10]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_uniformity(&[100, 0]).unwrap();
        assert_eq!(r.statistic, 100.0);
        assert!(r.p_value < 1e-20);
        assert!(chi_square_uniformity(&[3, 4]).is_err());
        assert!(chi_square_uniformity(&[30]).is_err());
    }

    #[test]
    fn chi_square_uniformity_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut small = 0;
        for _ in 0..1000 {
            let mut counts = [0u64; 24];
            for _ in 0..100_000 {
                counts[rng.random_range(0..24)] += 1;
            }
            if chi_square_uniformity(&counts).unwrap().p_value <= 1e-3 {
                small += 1;
            }
        }
        // expected 1 in 1000; 4 or more would be very unusual
        assert!(small <= 4, "{small} calibration runs fell below 1e-3");
    }

    #[test]
    fn homogeneity_detects_difference() {
        let same = vec![vec![250, 250, 250, 250], vec![260, 240, 255, 245]];
        assert!(chi_square_homogeneity(&same).unwrap().p_value > 0.5);
        let diff = vec![vec![400, 200, 200, 200], vec![200, 200, 200, 400]];
        assert!(chi_square_homogeneity(&diff).unwrap().p_value < 1e-10);
    }

    #[test]
    fn summary_examples() {
        let s = SampleSummary::from_slice(&[3.0; 10]);
        assert_eq!(mc_mean_ci(&s, 4.0).unwrap(), (3.0, 0.0));
        let s = SampleSummary::from_slice(&[0.0, 1.0]);
        let (m, h) = mc_mean_ci(&s, 1.0).unwrap();
        assert_eq!(m, 0.5);
        assert!((h - 0.5).abs() < 1e-15);
        assert!(mc_mean_ci(&SampleSummary::from_slice(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn variance_se_is_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let (v, se) = variance_with_se(&xs).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 4.0 * se);
        // uniform: Var(s²) ≈ (1/80 − 1/144)/n
        assert!((se - ((1.0 / 80.0 - 1.0 / 144.0) / 1e5f64).sqrt()).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn merge_matches_concatenation(a in proptest::collection::vec(-1e3f64..1e3, 0..40),
                                       b in proptest::collection::vec(-1e3f64..1e3, 0..40)) {
            let merged = SampleSummary::from_slice(&a).merge(&SampleSummary::from_slice(&b));
            let mut all = a.clone();
            all.extend(&b);
            let direct = SampleSummary::from_slice(&all);
            prop_assert_eq!(merged.count, direct.count);
            let scale = 1.0 + direct.mean.abs();
            prop_assert!((merged.mean - direct.mean).abs() <= 1e-12 * scale * 10.0);
            prop_assert!((merged.m2 - direct.m2).abs() <= 1e-12 * (1.0 + direct.m2) * 10.0);
        }

        #[test]
        fn merge_is_associative(a in proptest::collection::vec(-10f64..10.0, 1..20),
                                b in proptest::collection::vec(-10f64..10.0, 1..20),
                                c in proptest::collection::vec(-10f64..10.0, 1..20)) {
            let (sa, sb, sc) = (SampleSummary::from_slice(&a), SampleSummary::from_slice(&b), SampleSummary::from_slice(&c));
            let l = sa.merge(&sb).merge(&sc);
            let r = sa.merge(&sb.merge(&sc));
            prop_assert!((l.mean - r.mean).abs() <= 1e-12 * (1.0 + l.mean.abs()));
            prop_assert!((l.m2 - r.m2).abs() <= 1e-12 * (1.0 + l.m2));
        }

        #[test]
        fn ks_invariant_under_monotone_maps(a in proptest::collection::vec(-5f64..5.0, 50..80),
                                            b in proptest::collection::vec(-5f64..5.0, 50..80)) {
            let r1 = ks_two_sample(&a, &b).unwrap();
            let f = |x: &f64| x.exp() * 3.0 + 1.0;
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            let r2 = ks_two_sample(&fa, &fb).unwrap();
            prop_assert_eq!(r1.statistic, r2.statistic);
        }
    }
}
