//! Sojourn times in small balls, covering counts and negative moments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracdim::box_count;
use crate::linops::{spectral_decompose, SpectralDecomposition, DEFAULT_CLUSTER_TOL};
use crate::points::norm;
use crate::process::{exponent_of, uniform_grid, Path, Process, ProcessSpec};
use crate::rng::derive;
use crate::stats::{self, compensated_sum, mean_stderr, LineFit};

/// Occupation time of the closed ball `|x| <= a` as a left Riemann sum.
pub fn sojourn_time(path: &Path, a: f64) -> Result<f64> {
    check_radius(a)?;
    if path.is_empty() {
        return Err(Error::Domain("empty path".into()));
    }
    Ok(sojourn_times(path, &[a])[0])
}

fn check_radius(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("radius must be positive, got {a}")));
    }
    Ok(())
}

/// Sojourn times for several radii from a single pass over the path.
fn sojourn_times(path: &Path, radii: &[f64]) -> Vec<f64> {
    let mut acc = vec![Vec::new(); radii.len()];
    for (k, w) in path.times.windows(2).enumerate() {
        let r = norm(path.values.point(k));
        for (j, &a) in radii.iter().enumerate() {
            if r <= a {
                acc[j].push(w[1] - w[0]);
            }
        }
    }
    acc.into_iter().map(compensated_sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournEstimate {
    pub a: f64,
    pub s: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Per-path sojourn times for every radius, path `i` simulated from
/// `(seed, i)`. Returned as one vector per radius.
fn sojourn_samples(
    spec: &ProcessSpec,
    radii: &[f64],
    s: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    for &a in radii {
        check_radius(a)?;
    }
    if n_paths < 2 {
        return Err(Error::InsufficientSamples(format!("need at least 2 paths, got {n_paths}")));
    }
    let process = Process::new(spec.clone())?;
    let grid = uniform_grid(s, dt)?;
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| process.simulate(&grid, seed, i).map(|p| sojourn_times(&p, radii)))
        .collect::<Result<_>>()?;
    Ok((0..radii.len())
        .map(|j| per_path.iter().map(|v| v[j]).collect())
        .collect())
}

fn summarize(a: f64, s: f64, dt: f64, samples: &[f64]) -> SojournEstimate {
    let (mean, stderr) = mean_stderr(samples);
    SojournEstimate {
        a,
        s,
        n_paths: samples.len(),
        dt,
        mean,
        stderr,
    }
}

pub fn estimate_expected_sojourn(
    spec: &ProcessSpec,
    a: f64,
    s: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<SojournEstimate> {
    let samples = sojourn_samples(spec, &[a], s, n_paths, dt, seed)?;
    Ok(summarize(a, s, dt, &samples[0]))
}

/// Estimates for every radius, sharing one set of paths.
pub fn estimate_sojourn_profile(
    spec: &ProcessSpec,
    agrid: &[f64],
    s: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<SojournEstimate>> {
    let samples = sojourn_samples(spec, agrid, s, n_paths, dt, seed)?;
    Ok(agrid
        .iter()
        .zip(&samples)
        .map(|(&a, v)| summarize(a, s, dt, v))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SojournCase {
    /// `alpha_1 <= d_1`
    I,
    /// `alpha_1 > d_1 = 1`
    Ii,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalExponent {
    pub exponent: f64,
    pub case: SojournCase,
}

/// Small-ball exponent of the expected sojourn time: `alpha_1` when
/// `alpha_1 <= d_1`, and `1 + alpha_2 (1 - 1/alpha_1)` when `alpha_1 > d_1 = 1`.
pub fn theoretical_sojourn_exponent(dec: &SpectralDecomposition) -> Result<TheoreticalExponent> {
    let alpha = dec.alpha();
    let d1 = dec.dblock[0] as f64;
    let a1 = alpha[0];
    if a1 <= d1 + 1e-12 {
        return Ok(TheoreticalExponent {
            exponent: a1,
            case: SojournCase::I,
        });
    }
    if dec.dblock[0] == 1 && alpha.len() >= 2 {
        return Ok(TheoreticalExponent {
            exponent: 1.0 + alpha[1] * (1.0 - 1.0 / a1),
            case: SojournCase::Ii,
        });
    }
    Err(Error::NotCovered(format!(
        "alpha_1 = {a1} exceeds d_1 = {d1} and no second block exists"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub agrid: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub logmeans: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub slope_ci: (f64, f64),
    pub theory: Option<TheoreticalExponent>,
    pub theory_in_ci: Option<bool>,
}

impl ExponentFit {
    /// Whether the slope lies within `band` of the theoretical exponent.
    pub fn within(&self, band: f64) -> Option<bool> {
        self.theory.map(|t| (self.slope - t.exponent).abs() <= band)
    }
}

/// Weighted regression of `ln mean` on `ln a`, weights `(mean / stderr)^2`
/// (the delta-method variance of `ln mean`). Falls back to ordinary least
/// squares when any standard error vanishes.
pub fn fit_log_log(agrid: &[f64], means: &[f64], stderrs: &[f64]) -> Result<ExponentFit> {
    if agrid.len() != means.len() || agrid.len() != stderrs.len() {
        return Err(Error::Shape("radius, mean and stderr lengths differ".into()));
    }
    if agrid.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 radii, got {}", agrid.len())));
    }
    if agrid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("radius grid must be strictly descending".into()));
    }
    if let Some((&a, _)) = agrid.iter().zip(means).find(|(_, &m)| !(m > 0.0)) {
        return Err(Error::DegenerateCell { a });
    }
    let x: Vec<f64> = agrid.iter().map(|a| a.ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let fit: LineFit = if stderrs.iter().all(|&s| s > 0.0) {
        let w: Vec<f64> = means.iter().zip(stderrs).map(|(m, s)| (m / s).powi(2)).collect();
        stats::wls(&x, &y, &w)?
    } else {
        stats::ols(&x, &y)?
    };
    Ok(ExponentFit {
        agrid: agrid.to_vec(),
        means: means.to_vec(),
        stderrs: stderrs.to_vec(),
        logmeans: y,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        slope_se: fit.slope_se,
        slope_ci: fit.slope_ci,
        theory: None,
        theory_in_ci: None,
    })
}

fn theory_for(spec: &ProcessSpec) -> Result<Option<TheoreticalExponent>> {
    let dec = spectral_decompose(&exponent_of(spec)?, DEFAULT_CLUSTER_TOL)?;
    match theoretical_sojourn_exponent(&dec) {
        Ok(t) => Ok(Some(t)),
        Err(Error::NotCovered(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn sojourn_exponent(
    spec: &ProcessSpec,
    agrid: &[f64],
    s: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<ExponentFit> {
    if agrid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("radius grid must be strictly descending".into()));
    }
    let est = estimate_sojourn_profile(spec, agrid, s, n_paths, dt, seed)?;
    let means: Vec<f64> = est.iter().map(|e| e.mean).collect();
    let stderrs: Vec<f64> = est.iter().map(|e| e.stderr).collect();
    let mut fit = fit_log_log(agrid, &means, &stderrs)?;
    fit.theory = theory_for(spec)?;
    fit.theory_in_ci = fit
        .theory
        .map(|t| t.exponent >= fit.slope_ci.0 && t.exponent <= fit.slope_ci.1);
    Ok(fit)
}

/// Number of half-open grid cubes of side `a` hit by the sampled path.
pub fn covering_count(path: &Path, a: f64) -> Result<u64> {
    check_radius(a)?;
    if path.is_empty() {
        return Err(Error::Domain("empty path".into()));
    }
    box_count(&path.values, a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub a: f64,
    pub s: f64,
    pub d: usize,
    pub n_paths: usize,
    pub mean_count: f64,
    pub count_stderr: f64,
    pub sojourn: SojournEstimate,
    /// `2 3^d s / E[T(a/3, s)]`
    pub bound: f64,
    pub bound_stderr: f64,
    /// Two joint standard errors.
    pub slack: f64,
    pub pass: bool,
}

fn covering_report(a: f64, s: f64, d: usize, counts: &[f64], sojourn: SojournEstimate) -> Result<CoveringReport> {
    if !(sojourn.mean > 0.0) {
        return Err(Error::DegenerateCell { a: a / 3.0 });
    }
    let (mean_count, count_stderr) = mean_stderr(counts);
    let k = 2.0 * 3f64.powi(d as i32) * s;
    let bound = k / sojourn.mean;
    let bound_stderr = k * sojourn.stderr / (sojourn.mean * sojourn.mean);
    let slack = 2.0 * (count_stderr.powi(2) + bound_stderr.powi(2)).sqrt();
    Ok(CoveringReport {
        a,
        s,
        d,
        n_paths: counts.len(),
        mean_count,
        count_stderr,
        sojourn,
        bound,
        bound_stderr,
        slack,
        pass: mean_count <= bound + slack,
    })
}

/// Checks `E[M(a,s)] <= 2 3^d s / E[T(a/3,s)]`, estimating the two sides on
/// independent path sets.
pub fn covering_inequality_check(
    spec: &ProcessSpec,
    a: f64,
    s: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<CoveringReport> {
    check_radius(a)?;
    if n_paths < 2 {
        return Err(Error::InsufficientSamples(format!("need at least 2 paths, got {n_paths}")));
    }
    let process = Process::new(spec.clone())?;
    let grid = uniform_grid(s, dt)?;
    let count_seed = derive(seed, 0);
    let counts: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = process.simulate(&grid, count_seed, i)?;
            box_count(&p.values, a).map(|c| c as f64)
        })
        .collect::<Result<_>>()?;
    let sojourn = estimate_expected_sojourn(spec, a / 3.0, s, n_paths, dt, derive(seed, 1))?;
    covering_report(a, s, process.dim(), &counts, sojourn)
}

/// The same check on caller-supplied path sets.
pub fn covering_inequality_from_paths(count_paths: &[Path], sojourn_paths: &[Path], a: f64) -> Result<CoveringReport> {
    check_radius(a)?;
    if count_paths.len() < 2 || sojourn_paths.len() < 2 {
        return Err(Error::InsufficientSamples("need at least 2 paths per side".into()));
    }
    let s = count_paths[0].horizon();
    let d = count_paths[0].dim();
    let counts: Vec<f64> = count_paths
        .iter()
        .map(|p| box_count(&p.values, a).map(|c| c as f64))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = sojourn_paths
        .iter()
        .map(|p| sojourn_time(p, a / 3.0))
        .collect::<Result<_>>()?;
    let dt = sojourn_paths[0].times.get(1).map_or(0.0, |t| t - sojourn_paths[0].times[0]);
    let sojourn = summarize(a / 3.0, sojourn_paths[0].horizon(), dt, &times);
    covering_report(a, s, d, &counts, sojourn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeMomentReport {
    pub delta: f64,
    pub n: usize,
    pub estimates: Vec<MomentEstimate>,
    pub max: f64,
    pub min: f64,
    pub all_finite: bool,
}

impl NegativeMomentReport {
    pub fn ratio(&self) -> f64 {
        self.max / self.min
    }
}

/// Monte Carlo `E |X(t)|^-delta` for each `t` in `tgrid`, which must lie in
/// `[1, c)`.
pub fn negative_moment(spec: &ProcessSpec, delta: f64, tgrid: &[f64], n: usize, seed: u64) -> Result<NegativeMomentReport> {
    let process = Process::new(spec.clone())?;
    let d = process.dim() as f64;
    if !(delta > 0.0 && delta < d) {
        return Err(Error::Domain(format!("delta must lie in (0, {d}), got {delta}")));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples(format!("need at least 2 draws, got {n}")));
    }
    if tgrid.is_empty() {
        return Err(Error::Domain("empty time grid".into()));
    }
    let c = spec.scale_base().unwrap_or(2.0);
    if let Some(t) = tgrid.iter().find(|&&t| !(t >= 1.0 && t < c)) {
        return Err(Error::Domain(format!("t = {t} lies outside [1, {c})")));
    }
    let estimates = tgrid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let draws = process.sample_marginal(t, n, derive(seed, k as u64))?;
            let v: Vec<f64> = draws.iter().map(|x| norm(x).powf(-delta)).collect();
            let (mean, stderr) = mean_stderr(&v);
            Ok(MomentEstimate { t, mean, stderr })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = estimates.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
    let min = estimates.iter().map(|e| e.mean).fold(f64::INFINITY, f64::min);
    Ok(NegativeMomentReport {
        delta,
        n,
        all_finite: estimates.iter().all(|e| e.mean.is_finite()),
        estimates,
        max,
        min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::ExponentMatrix;
    use crate::points::PointSet;
    use approx::assert_relative_eq;

    fn path_from(times: Vec<f64>, rows: &[Vec<f64>]) -> Path {
        Path {
            times,
            values: PointSet::from_rows(rows).unwrap(),
            seed: 0,
            spec: ProcessSpec::brownian(rows[0].len()),
        }
    }

    fn unit_grid(n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    #[test]
    fn zero_path_stays_inside() {
        let p = path_from(unit_grid(16), &vec![vec![0.0, 0.0]; 17]);
        assert_relative_eq!(sojourn_time(&p, 0.1).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(covering_count(&p, 0.5).unwrap(), 1);
    }

    #[test]
    fn leaving_path_counts_one_cell() {
        let mut rows = vec![vec![5.0]; 17];
        rows[0] = vec![0.0];
        let p = path_from(unit_grid(16), &rows);
        assert_relative_eq!(sojourn_time(&p, 0.5).unwrap(), 1.0 / 16.0);
    }

    #[test]
    fn radius_must_be_positive() {
        let p = path_from(unit_grid(2), &vec![vec![0.0]; 3]);
        assert!(matches!(sojourn_time(&p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(covering_count(&p, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn covering_counts_for_lines() {
        let n = 4096;
        let seg: Vec<Vec<f64>> = (0..=n).map(|k| vec![k as f64 / n as f64, 0.0]).collect();
        let c = covering_count(&path_from(unit_grid(n), &seg), 0.125).unwrap();
        assert!(c == 8 || c == 9, "{c}");
        let diag: Vec<Vec<f64>> = (0..=n).map(|k| vec![k as f64 / n as f64; 2]).collect();
        let c = covering_count(&path_from(unit_grid(n), &diag), 0.125).unwrap();
        assert!((8..=16).contains(&c), "{c}");
    }

    #[test]
    fn huge_ball_holds_everything() {
        let e = estimate_expected_sojourn(&ProcessSpec::brownian(2), 1e3, 1.0, 20, 1.0 / 256.0, 3).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-9);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn sojourn_needs_two_paths() {
        assert!(matches!(
            estimate_expected_sojourn(&ProcessSpec::brownian(2), 0.5, 1.0, 1, 0.01, 3),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn sojourn_estimate_is_deterministic() {
        let spec = ProcessSpec::brownian(2);
        let a = estimate_expected_sojourn(&spec, 0.25, 1.0, 50, 1.0 / 512.0, 42).unwrap();
        let b = estimate_expected_sojourn(&spec, 0.25, 1.0, 50, 1.0 / 512.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.mean >= 0.0 && a.mean <= 1.0);
    }

    #[test]
    fn theoretical_exponent_examples() {
        let dec = |m: &[f64]| spectral_decompose(&ExponentMatrix::diagonal(m).unwrap(), DEFAULT_CLUSTER_TOL).unwrap();
        let t = theoretical_sojourn_exponent(&dec(&[0.5, 0.5])).unwrap();
        assert_eq!((t.exponent, t.case), (2.0, SojournCase::I));
        let t = theoretical_sojourn_exponent(&dec(&[1.0 / 1.8, 1.0 / 0.9])).unwrap();
        assert_eq!(t.case, SojournCase::Ii);
        assert_relative_eq!(t.exponent, 1.4, epsilon = 1e-12);
        let t = theoretical_sojourn_exponent(&dec(&[1.0 / 1.5, 1.0 / 1.5])).unwrap();
        assert_relative_eq!(t.exponent, 1.5, epsilon = 1e-12);
        assert_eq!(t.case, SojournCase::I);
        assert!(matches!(theoretical_sojourn_exponent(&dec(&[1.0 / 1.5])), Err(Error::NotCovered(_))));
    }

    #[test]
    fn synthetic_power_law_fit() {
        let agrid: Vec<f64> = (2..=6).map(|k| 2f64.powi(-k)).collect();
        let means: Vec<f64> = agrid.iter().map(|a| a.powf(1.5)).collect();
        let fit = fit_log_log(&agrid, &means, &[0.0; 5]).unwrap();
        assert_relative_eq!(fit.slope, 1.5, epsilon = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
        let se: Vec<f64> = means.iter().map(|m| 0.01 * m).collect();
        let fit = fit_log_log(&agrid, &means, &se).unwrap();
        assert_relative_eq!(fit.slope, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_ball_is_degenerate() {
        let agrid = [0.5, 0.25, 0.125, 0.0625];
        let err = fit_log_log(&agrid, &[0.3, 0.1, 0.0, 0.0], &[0.01; 4]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCell { a } if a == 0.125));
        assert!(fit_log_log(&agrid[..3], &[0.3, 0.1, 0.05], &[0.01; 3]).is_err());
    }

    #[test]
    fn covering_check_on_constant_paths() {
        let zero = path_from(unit_grid(8), &vec![vec![0.0, 0.0]; 9]);
        let paths = vec![zero.clone(), zero];
        let r = covering_inequality_from_paths(&paths, &paths, 0.125).unwrap();
        assert_eq!(r.mean_count, 1.0);
        assert_relative_eq!(r.sojourn.mean, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.bound, 18.0, epsilon = 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn negative_moment_domain() {
        let spec = ProcessSpec::brownian(2);
        assert!(matches!(negative_moment(&spec, 2.0, &[1.0], 100, 1), Err(Error::Domain(_))));
        assert!(matches!(negative_moment(&spec, 0.0, &[1.0], 100, 1), Err(Error::Domain(_))));
        assert!(matches!(negative_moment(&spec, 1.0, &[2.5], 100, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn negative_moment_of_planar_gaussian() {
        let r = negative_moment(&ProcessSpec::brownian(2), 1.0, &[1.0], 100_000, 9).unwrap();
        assert!((r.estimates[0].mean - 1.2533141373155).abs() < 0.03, "{:?}", r.estimates);
        let r = negative_moment(&ProcessSpec::brownian(2), 1e-6, &[1.0], 10_000, 9).unwrap();
        assert!((r.estimates[0].mean - 1.0).abs() < 1e-4);
    }
}
