//! Small statistics helpers for ensembles and fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Least-squares line `y ≈ intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit { slope, intercept: my - slope * mx, r_squared }
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

/// Two-sided normal quantile `z_{1-α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0)
}

/// Confidence half-width of the sample mean.
pub fn mean_ci_half_width(xs: &[f64], alpha: f64) -> f64 {
    let (_, v) = mean_var(xs);
    normal_quantile(alpha) * (v / xs.len() as f64).sqrt()
}

/// Asymptotic confidence interval for a variance, using the fourth moment.
pub fn variance_ci(xs: &[f64], alpha: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let (m, v) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let se = ((m4 - v * v).max(0.0) / n).sqrt();
    let z = normal_quantile(alpha);
    (v - z * se, v + z * se)
}

/// Kolmogorov–Smirnov statistic against `N(mean, var)`.
pub fn ks_normal(xs: &[f64], mean: f64, var: f64) -> f64 {
    let normal = Normal::new(mean, var.sqrt()).expect("positive variance");
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value `P(K > sqrt(n) D)` of the Kolmogorov distribution,
/// with the small-sample correction `sqrt(n) + 0.12 + 0.11/sqrt(n)`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Classical critical values: P(K > 1.358) = 0.05, P(K > 1.628) = 0.01.
        let n = 1_000_000;
        let d = |l: f64| l / ((n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt());
        assert!((ks_p_value(d(1.358), n) - 0.05).abs() < 1e-3);
        assert!((ks_p_value(d(1.628), n) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn normal_sample_passes_ks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_p_value(ks_normal(&xs, 0.0, 1.0), xs.len()) > 0.01);
        let (lo, hi) = variance_ci(&xs, 0.01);
        assert!(lo < 1.0 && 1.0 < hi);
    }

    proptest! {
        #[test]
        fn variance_is_shift_invariant(xs in proptest::collection::vec(-10.0f64..10.0, 2..50), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((mean_var(&xs).1 - mean_var(&shifted).1).abs() < 1e-9);
        }

        #[test]
        fn ks_statistic_in_unit_interval(xs in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
            let d = ks_normal(&xs, 0.0, 1.0);
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
