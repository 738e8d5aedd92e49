//! Small hypothesis tests used by the stream checks and the benchmark
//! harness.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

/// Pearson goodness-of-fit against `expected` counts; returns
/// `(statistic, p_value)`.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::Input("chi-square needs at least two aligned categories".into()));
    }
    if expected.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Input("expected counts must be positive".into()));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).map_err(|e| Error::Internal(e.to_string()))?;
    Ok((stat, dist.sf(stat)))
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value;
/// returns `(d_statistic, p_value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("KS test needs two non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sided paired t-test of `H1: mean(a − b) < 0`; returns
/// `(t_statistic, p_value)`.
pub fn paired_t_less(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input("paired t-test needs at least two aligned pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        let p = if mean < 0.0 { 0.0 } else { 1.0 };
        return Ok((mean.signum() * f64::INFINITY, p));
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Internal(e.to_string()))?;
    Ok((t, dist.cdf(t)))
}

/// One-sided sign test: probability of at least `successes` out of `trials`
/// under a fair coin.
pub fn sign_test(successes: u64, trials: u64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(Error::Input(format!("invalid sign test {successes}/{trials}")));
    }
    if successes == 0 {
        return Ok(1.0);
    }
    let dist = Binomial::new(0.5, trials).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(dist.sf(successes - 1))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_perfect_fit() {
        let (s, p) = chi_square_gof(&[10.0, 10.0], &[10.0, 10.0]).unwrap();
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square_gof(&[69.6, 30.4], &[50.0, 50.0]).unwrap();
        assert!(p < 0.001);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(f64::from).collect();
        let (d, p) = ks_two_sample(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = (200..300).map(f64::from).collect();
        let (d, p) = ks_two_sample(&a, &b).unwrap();
        assert_eq!(d, 1.0);
        assert!(p < 1e-10);
    }

    #[test]
    fn kolmogorov_reference_value() {
        // Q_KS(1.36) is the classic 5% point.
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn paired_t_direction() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 2.9, 4.2, 5.0];
        let (t, p) = paired_t_less(&a, &b).unwrap();
        assert!(t < 0.0);
        assert!(p < 0.05);
        let (_, q) = paired_t_less(&b, &a).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test(20, 20).unwrap() - 0.5f64.powi(20)).abs() < 1e-15);
        assert!((sign_test(1, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(sign_test(0, 5).unwrap(), 1.0);
        assert!(sign_test(6, 5).is_err());
    }

    #[test]
    fn summary_stats() {
        assert_eq!(mean(&[1.0, 3.0]), 2.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(std_dev(&[5.0]), 0.0);
    }
}
