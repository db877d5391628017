//! Small statistical toolkit: deterministic summation, regression lines
//! with confidence intervals, two-sample Kolmogorov–Smirnov and empirical
//! characteristic functions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::points::PointSet;

/// Neumaier-compensated sum. Callers pass values in a fixed (index) order,
/// which makes every reduction in the crate independent of thread count.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Two-sided 97.5% Student-t quantile.
pub(crate) fn t975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    /// 95% confidence interval for the slope.
    pub slope_ci: (f64, f64),
}

/// Ordinary least squares with a Student-t slope interval.
pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit(format!(
            "need matching inputs with at least 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    if !(sxx > 0.0) {
        return Err(Error::Fit("regressor has no spread".into()));
    }
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let syy = compensated_sum(y.iter().map(|b| (b - my) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = compensated_sum(
        x.iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2)),
    );
    let r2 = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    let (slope_se, half) = if x.len() > 2 {
        let se = (ssr / (n - 2.0) / sxx).sqrt();
        (se, se * t975(n - 2.0))
    } else {
        (f64::NAN, f64::INFINITY)
    };
    Ok(LineFit {
        slope,
        intercept,
        r2,
        slope_se,
        slope_ci: (slope - half, slope + half),
    })
}

/// Weighted least squares with known inverse-variance weights; the slope
/// interval uses the normal 97.5% quantile.
pub fn wls(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() || x.len() < 2 {
        return Err(Error::Fit("mismatched or too short weighted fit inputs".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Fit("weights must be positive and finite".into()));
    }
    let sw = compensated_sum(w.iter().copied());
    let mx = compensated_sum(x.iter().zip(w).map(|(a, v)| a * v)) / sw;
    let my = compensated_sum(y.iter().zip(w).map(|(b, v)| b * v)) / sw;
    let sxx = compensated_sum(x.iter().zip(w).map(|(a, v)| v * (a - mx) * (a - mx)));
    if !(sxx > 0.0) {
        return Err(Error::Fit("regressor has no spread".into()));
    }
    let sxy = compensated_sum(
        x.iter()
            .zip(y)
            .zip(w)
            .map(|((a, b), v)| v * (a - mx) * (b - my)),
    );
    let syy = compensated_sum(y.iter().zip(w).map(|(b, v)| v * (b - my) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = compensated_sum(
        x.iter()
            .zip(y)
            .zip(w)
            .map(|((a, b), v)| v * (b - intercept - slope * a).powi(2)),
    );
    let r2 = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_se = (1.0 / sxx).sqrt();
    let half = 1.959963984540054 * slope_se;
    Ok(LineFit {
        slope,
        intercept,
        r2,
        slope_se,
        slope_ci: (slope - half, slope + half),
    })
}

/// Kolmogorov distribution survival function `Q(lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction applied to the effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples("KS test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Domain("KS samples contain NaN".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let sq = ne.sqrt();
    let p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult {
        statistic: d,
        p_value,
    })
}

/// Empirical characteristic function `(1/n) sum exp(i <theta, x>)` as (re, im).
pub fn empirical_cf(sample: &PointSet, theta: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mut re = Vec::with_capacity(sample.len());
    let mut im = Vec::with_capacity(sample.len());
    for p in sample.iter() {
        let phase: f64 = p.iter().zip(theta).map(|(x, t)| x * t).sum();
        let (s, c) = phase.sin_cos();
        re.push(c);
        im.push(s);
    }
    (compensated_sum(re) / n, compensated_sum(im) / n)
}

/// `max_theta |phi_A(theta) - phi_B(theta)|` over the supplied frequencies.
pub fn ecf_distance(a: &PointSet, b: &PointSet, thetas: &[Vec<f64>]) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "samples live in R^{} and R^{}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples("empty sample".into()));
    }
    let mut worst: f64 = 0.0;
    for theta in thetas {
        if theta.len() != a.dim() {
            return Err(Error::Shape("frequency dimension mismatch".into()));
        }
        let (ra, ia) = empirical_cf(a, theta);
        let (rb, ib) = empirical_cf(b, theta);
        worst = worst.max((ra - rb).hypot(ia - ib));
    }
    Ok(worst)
}

/// Sample skewness.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs.iter().copied()) / n;
    let m2 = compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / n;
    let m3 = compensated_sum(xs.iter().map(|x| (x - mean).powi(3))) / n;
    m3 / m2.powf(1.5)
}
