use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Outcome of a two-sample Kolmogorov-Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup |F_a − F_b|`.
    pub statistic: f64,
    /// Rejection threshold for the statistic at `alpha`.
    pub critical: f64,
    pub alpha: f64,
    /// True when the samples are not distinguishable at `alpha`.
    pub pass: bool,
}

/// Asymptotic coefficient `c(α) = √(−ln(α/2) / 2)`; `c(0.05) ≈ 1.358`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Maximum distance between the empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS test needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("KS sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    // step through distinct values so ties move both ECDFs together
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    Ok(d)
}

/// Two-sample KS test using the asymptotic criterion
/// `D ≤ c(α) √((n + m) / (n m))`.
pub fn ks_test(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("KS alpha must lie in (0, 1)"));
    }
    let statistic = ks_statistic(a, b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let critical = ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt();
    Ok(KsResult {
        statistic,
        critical,
        alpha,
        pass: statistic <= critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Direct sup over every sample point of |F_a(x) − F_b(x)|.
    fn brute_statistic(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn examples() {
        let a = [1.0, 2.0, 3.0];
        let r = ks_test(&a, &a, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.pass);
        let r = ks_test(&a, &[4.0, 5.0, 6.0], 0.05).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!((ks_coefficient(0.05) - 1.358).abs() < 1e-3);
    }

    #[test]
    fn same_distribution_passes_most_seeds() {
        let mut passes = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
            if ks_test(&a, &b, 0.05).unwrap().pass {
                passes += 1;
            }
        }
        assert!(passes >= 90, "{passes}/100");
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in prop::collection::vec(-3i32..3, 1..30),
                               b in prop::collection::vec(-3i32..3, 1..30)) {
            // small integer support forces plenty of ties
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert!((ks_statistic(&a, &b).unwrap() - brute_statistic(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_transform(a in prop::collection::vec(-5.0f64..5.0, 1..40),
                                              b in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let f = |v: &f64| (v * 0.7).exp() + v.powi(3);
            let ta: Vec<f64> = a.iter().map(f).collect();
            let tb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&ta, &tb).unwrap());
        }
    }
}
