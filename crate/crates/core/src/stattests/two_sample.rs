//! Two-sample and correlation tests.

use serde::{Deserialize, Serialize};

use super::dist::{kolmogorov_sf, normal_quantile, t_p_value_two_sided, t_quantile};
use super::{StatError, TestResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WelchTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    /// CI for the mean difference at the requested level.
    pub ci_diff: (f64, f64),
    pub ci_mean_x: (f64, f64),
    pub ci_mean_y: (f64, f64),
    pub n1: usize,
    pub n2: usize,
    pub level: f64,
}

impl WelchTest {
    pub fn as_result(&self) -> TestResult {
        TestResult {
            statistic: self.statistic,
            p_value: self.p_value,
            ci: Some(self.ci_diff),
            n1: self.n1,
            n2: self.n2,
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t test with Welch-Satterthwaite degrees of
/// freedom, plus per-sample mean confidence intervals at `level`.
pub fn student_two_sample(x: &[f64], y: &[f64], level: f64) -> Result<WelchTest, StatError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(StatError::SampleTooSmall {
            n: x.len().min(y.len()),
            min: 2,
        });
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(StatError::InvalidLevel(level));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let sx2 = vx / n1;
    let sy2 = vy / n2;
    let se = (sx2 + sy2).sqrt();
    let (t, df) = if se > 0.0 {
        let df = (sx2 + sy2).powi(2)
            / (sx2 * sx2 / (n1 - 1.0) + sy2 * sy2 / (n2 - 1.0));
        ((mx - my) / se, df)
    } else {
        (0.0, n1 + n2 - 2.0)
    };
    let p_value = if se > 0.0 {
        t_p_value_two_sided(t, df)
    } else if mx == my {
        1.0
    } else {
        0.0
    };
    let alpha = 1.0 - level;
    let mean_ci = |m: f64, v: f64, n: f64| {
        if v > 0.0 {
            let q = t_quantile(1.0 - alpha / 2.0, n - 1.0);
            let half = q * (v / n).sqrt();
            (m - half, m + half)
        } else {
            (m, m)
        }
    };
    let ci_diff = if se > 0.0 {
        let q = t_quantile(1.0 - alpha / 2.0, df);
        ((mx - my) - q * se, (mx - my) + q * se)
    } else {
        (mx - my, mx - my)
    };
    Ok(WelchTest {
        statistic: t,
        df,
        p_value,
        mean_x: mx,
        mean_y: my,
        ci_diff,
        ci_mean_x: mean_ci(mx, vx, n1),
        ci_mean_y: mean_ci(my, vy, n2),
        n1: x.len(),
        n2: y.len(),
        level,
    })
}

/// Pearson correlation with a Fisher-z confidence interval
/// `tanh(atanh(r) +/- z / sqrt(n - 3))` and a t-based p-value for r = 0.
pub fn correlation_ci(x: &[f64], y: &[f64], level: f64) -> Result<TestResult, StatError> {
    if x.len() != y.len() {
        return Err(StatError::LengthMismatch);
    }
    let n = x.len();
    if n < 4 {
        return Err(StatError::SampleTooSmall { n, min: 4 });
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(StatError::InvalidLevel(level));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    if vx == 0.0 || vy == 0.0 {
        return Err(StatError::ZeroVariance);
    }
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n as f64 - 1.0);
    let r = (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0);

    let (p_value, ci) = if r.abs() >= 1.0 - 1e-15 {
        (0.0, (r, r))
    } else {
        let df = n as f64 - 2.0;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
        let zr = r.atanh();
        let half = z / ((n as f64 - 3.0).sqrt());
        (
            t_p_value_two_sided(t, df),
            ((zr - half).tanh(), (zr + half).tanh()),
        )
    };
    Ok(TestResult {
        statistic: r,
        p_value,
        ci: Some(ci),
        n1: n,
        n2: n,
    })
}

/// Two-sample Kolmogorov-Smirnov test: `D = sup |F_x - F_y|` over the
/// pooled sample points (right-continuous empirical CDFs), asymptotic
/// p-value from the Kolmogorov series with effective sample size
/// `n1 n2 / (n1 + n2)`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<TestResult, StatError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatError::EmptySample);
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    ys.sort_by(|a, b| a.total_cmp(b));
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let t = xs[i].min(ys[j]);
        while i < n1 && xs[i] <= t {
            i += 1;
        }
        while j < n2 && ys[j] <= t {
            j += 1;
        }
        let diff = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        d = d.max(diff);
    }
    let ne = (n1 as f64 * n2 as f64) / ((n1 + n2) as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        ci: None,
        n1,
        n2,
    })
}

/// One-sample Kolmogorov-Smirnov test against the uniform law on [0,1],
/// used to check p-value calibration.
pub fn ks_uniform(xs: &[f64]) -> Result<TestResult, StatError> {
    if xs.is_empty() {
        return Err(StatError::EmptySample);
    }
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let cdf = v.clamp(0.0, 1.0);
        d = d.max(((i + 1) as f64 / n - cdf).abs());
        d = d.max((cdf - i as f64 / n).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        ci: None,
        n1: s.len(),
        n2: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identical_samples() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let w = student_two_sample(&x, &x, 0.95).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!((w.p_value - 1.0).abs() < 1e-12);
        let ks = ks_two_sample(&x, &x).unwrap();
        assert_eq!(ks.statistic, 0.0);
        assert!((ks.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_shift_forces_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let w = student_two_sample(&x, &y, 0.95).unwrap();
        assert!(w.p_value < 1e-16);
        // disjoint supports: U(0,1) vs U(0.5,1.5) with D >= 0.5
        let u: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let v: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() + 0.5).collect();
        let ks = ks_two_sample(&u, &v).unwrap();
        assert!(ks.statistic >= 0.4);
        assert!(ks.p_value < 1e-10);
    }

    #[test]
    fn welch_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..60)
            .map(|_| 0.3 + 1.4 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w1 = student_two_sample(&x, &y, 0.95).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| 2.0 * v - 7.0).collect();
        let fy: Vec<f64> = y.iter().map(|v| 2.0 * v - 7.0).collect();
        let w2 = student_two_sample(&fx, &fy, 0.95).unwrap();
        assert!((w1.statistic - w2.statistic).abs() < 1e-10);
        assert!((w1.p_value - w2.p_value).abs() < 1e-10);
        // mean CIs transform with the same affine map
        assert!((w2.ci_mean_x.0 - (2.0 * w1.ci_mean_x.0 - 7.0)).abs() < 1e-9);
    }

    #[test]
    fn correlation_perfect_and_errors() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let r = correlation_ci(&x, &x, 0.99).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert_eq!(r.ci, Some((1.0, 1.0)));
        assert_eq!(r.p_value, 0.0);
        let flat = vec![2.0; 5];
        assert!(matches!(
            correlation_ci(&x, &flat, 0.99),
            Err(StatError::ZeroVariance)
        ));
        assert!(matches!(
            correlation_ci(&x[..3], &x[..3], 0.99),
            Err(StatError::SampleTooSmall { .. })
        ));
    }

    #[test]
    fn ks_monotone_transform_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..80).map(|_| rng.gen::<f64>() * 3.0).collect();
        let y: Vec<f64> = (0..120).map(|_| rng.gen::<f64>() * 3.0 + 0.2).collect();
        let d1 = ks_two_sample(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let fy: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let d2 = ks_two_sample(&fx, &fy).unwrap();
        assert!((d1.statistic - d2.statistic).abs() < 1e-15);
        assert!((d1.p_value - d2.p_value).abs() < 1e-15);
    }

    #[test]
    fn ks_uniform_detects_nonuniform() {
        let clustered: Vec<f64> = (0..200).map(|i| 0.1 + 0.000_1 * i as f64).collect();
        assert!(ks_uniform(&clustered).unwrap().p_value < 1e-10);
        let spread: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        assert!(ks_uniform(&spread).unwrap().p_value > 0.99);
    }
}
