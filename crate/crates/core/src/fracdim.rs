//! Time sets of known dimension, box counting, and range dimensions.

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{spectral_decompose, SpectralDecomposition, DEFAULT_CLUSTER_TOL};
use crate::points::PointSet;
use crate::process::{exponent_of, Process, ProcessSpec};
use crate::stats::{self, compensated_sum, mean_stderr, t975};

/// Upper limit on the number of points a time set may expand to.
pub const POINT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeSet {
    Interval(f64, f64),
    /// Middle-part Cantor set in `[0, 1]` keeping two pieces of relative
    /// length `ratio` at every level.
    Cantor { ratio: f64, level: u32 },
    Union(Vec<TimeSet>),
}

impl TimeSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            &TimeSet::Interval(lo, hi) => {
                if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(Error::Domain(format!("bad interval [{lo}, {hi}]")));
                }
            }
            &TimeSet::Cantor { ratio, .. } => {
                if !(ratio > 0.0 && ratio < 0.5) {
                    return Err(Error::Domain(format!("Cantor ratio must lie in (0, 1/2), got {ratio}")));
                }
            }
            TimeSet::Union(parts) => {
                if parts.is_empty() {
                    return Err(Error::Domain("empty union".into()));
                }
                parts.iter().try_for_each(TimeSet::validate)?;
            }
        }
        Ok(())
    }

    /// Hausdorff dimension of the limiting set.
    pub fn known_dim(&self) -> f64 {
        match self {
            &TimeSet::Interval(lo, hi) => {
                if hi > lo {
                    1.0
                } else {
                    0.0
                }
            }
            &TimeSet::Cantor { ratio, .. } => 2f64.ln() / (1.0 / ratio).ln(),
            TimeSet::Union(parts) => parts.iter().map(TimeSet::known_dim).fold(0.0, f64::max),
        }
    }

    fn point_count(&self, resolution: usize) -> u64 {
        match self {
            TimeSet::Interval(..) => resolution as u64,
            TimeSet::Cantor { level, .. } => 1u64.checked_shl(*level).unwrap_or(u64::MAX),
            TimeSet::Union(parts) => parts
                .iter()
                .fold(0u64, |acc, p| acc.saturating_add(p.point_count(resolution))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSetPoints {
    pub times: Vec<f64>,
    pub known_dim: f64,
}

/// Finite realization of a time set: `resolution` equispaced points per
/// interval (endpoints included), the `2^level` left endpoints of a Cantor
/// construction, or the sorted union of the parts.
pub fn time_set_points(ts: &TimeSet, resolution: usize) -> Result<TimeSetPoints> {
    ts.validate()?;
    let requested = ts.point_count(resolution);
    if requested > POINT_BUDGET {
        return Err(Error::Budget {
            requested,
            limit: POINT_BUDGET,
        });
    }
    let mut times = Vec::with_capacity(requested as usize);
    expand(ts, resolution, &mut times)?;
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(TimeSetPoints {
        times,
        known_dim: ts.known_dim(),
    })
}

fn expand(ts: &TimeSet, resolution: usize, out: &mut Vec<f64>) -> Result<()> {
    match ts {
        &TimeSet::Interval(lo, hi) => {
            if resolution < 2 {
                return Err(Error::Domain("interval resolution must be >= 2".into()));
            }
            let step = (hi - lo) / (resolution - 1) as f64;
            out.extend((0..resolution - 1).map(|k| lo + k as f64 * step));
            out.push(hi);
        }
        &TimeSet::Cantor { ratio, level } => {
            let start = out.len();
            out.push(0.0);
            let mut scale = 1.0;
            for _ in 0..level {
                let shift = (1.0 - ratio) * scale;
                let n = out.len() - start;
                for k in 0..n {
                    let t = out[start + k] + shift;
                    out.push(t);
                }
                scale *= ratio;
            }
        }
        TimeSet::Union(parts) => {
            for p in parts {
                expand(p, resolution, out)?;
            }
        }
    }
    Ok(())
}

/// Grid index of `x` for cells of side `delta`. Coordinates within a relative
/// `1e-9` of a cell boundary are snapped onto it, so points built as exact
/// multiples of `delta` land in the cell they start.
#[inline]
fn cell(x: f64, delta: f64) -> i64 {
    let q = x / delta;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.abs().max(1.0) {
        r as i64
    } else {
        q.floor() as i64
    }
}

/// Number of half-open grid boxes of side `delta` holding at least one point.
pub fn box_count(points: &PointSet, delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("box size must be positive, got {delta}")));
    }
    if points.is_empty() {
        return Err(Error::Domain("empty point cloud".into()));
    }
    if points.coords().iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("point cloud has non-finite coordinates".into()));
    }
    if points.dim() <= 4 {
        if let Some(n) = count_packed(points, delta) {
            return Ok(n);
        }
    }
    Ok(count_generic(points, delta))
}

/// Packs up to four 32-bit cell indices into one key; `None` if an index
/// does not fit.
fn count_packed(points: &PointSet, delta: f64) -> Option<u64> {
    let mut seen = FxHashSet::default();
    let mut last = None;
    for p in points.iter() {
        let mut key = 0u128;
        for (k, &x) in p.iter().enumerate() {
            let c = i32::try_from(cell(x, delta)).ok()?;
            key |= (c as u32 as u128) << (32 * k);
        }
        // Consecutive path samples often share a cell.
        if last != Some(key) {
            seen.insert(key);
            last = Some(key);
        }
    }
    Some(seen.len() as u64)
}

fn count_generic(points: &PointSet, delta: f64) -> u64 {
    let mut seen: FxHashSet<Vec<i64>> = FxHashSet::default();
    for p in points.iter() {
        seen.insert(p.iter().map(|&x| cell(x, delta)).collect());
    }
    seen.len() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCountEstimate {
    /// Box sizes, descending.
    pub deltas: Vec<f64>,
    pub counts: Vec<u64>,
    /// Whether each size entered the regression.
    pub used: Vec<bool>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub ci: (f64, f64),
}

/// Slope of `ln N(delta)` against `ln(1/delta)`. Sizes whose count exceeds a
/// tenth of the cloud or falls below 8 are left out of the fit.
pub fn box_dim_fit(points: &PointSet, deltagrid: &[f64]) -> Result<BoxCountEstimate> {
    if deltagrid.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 box sizes, got {}", deltagrid.len())));
    }
    if deltagrid.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Domain("box sizes must be positive".into()));
    }
    let mut deltas = deltagrid.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));
    deltas.dedup();
    let span = deltas[0] / deltas[deltas.len() - 1];
    if span < 100.0 * (1.0 - 1e-12) {
        return Err(Error::Fit(format!("box sizes span only a factor {span}, need two decades")));
    }
    let counts: Vec<u64> = deltas.iter().map(|&d| box_count(points, d)).collect::<Result<_>>()?;
    let n = points.len() as f64;
    let used: Vec<bool> = counts
        .iter()
        .map(|&c| c as f64 <= n / 10.0 && c >= 8)
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = deltas
        .iter()
        .zip(&counts)
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|((d, c), _)| (-d.ln(), (*c as f64).ln()))
        .unzip();
    if x.len() < 4 {
        return Err(Error::Fit(format!(
            "only {} box sizes left after the saturation guard",
            x.len()
        )));
    }
    let fit = stats::ols(&x, &y)?;
    Ok(BoxCountEstimate {
        deltas,
        counts,
        used,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        ci: fit.slope_ci,
    })
}

/// Discrete `s`-energy `n^-2 sum_{i != j} |x_i - x_j|^-s` of the empirical
/// measure; `+inf` when two points coincide.
pub fn energy_statistic(points: &PointSet, s: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientSamples("energy needs at least 2 points".into()));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("energy exponent must be positive, got {s}")));
    }
    let n = points.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.point(i);
            let terms: Vec<f64> = (i + 1..n)
                .map(|j| {
                    let r2: f64 = xi.iter().zip(points.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    r2.powf(-0.5 * s)
                })
                .collect();
            if terms.iter().any(|t| t.is_infinite()) {
                f64::INFINITY
            } else {
                compensated_sum(terms)
            }
        })
        .collect();
    if rows.iter().any(|r| r.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * compensated_sum(rows) / (n as f64 * n as f64))
}

/// Hausdorff dimension of `X(B)` from the block indices `alphas` (descending)
/// and the first block's dimension `d1`.
pub fn range_dim_from_indices(alphas: &[f64], d1: usize, dim_b: f64, d: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&dim_b) {
        return Err(Error::Domain(format!("dim B must lie in [0, 1], got {dim_b}")));
    }
    let a1 = *alphas.first().ok_or_else(|| Error::Shape("no spectral blocks".into()))?;
    let upper = a1 * dim_b;
    if d == 1 {
        return Ok(upper.min(1.0));
    }
    if upper <= d1 as f64 {
        return Ok(upper);
    }
    match alphas.get(1) {
        Some(&a2) if d1 == 1 => Ok(1.0 + a2 * (dim_b - 1.0 / a1)),
        _ => Err(Error::NotCovered(format!(
            "alpha_1 dim B = {upper} exceeds d_1 = {d1} without a second block"
        ))),
    }
}

pub fn theoretical_range_dim(dec: &SpectralDecomposition, dim_b: f64, d: usize) -> Result<f64> {
    range_dim_from_indices(&dec.alpha(), dec.dblock[0], dim_b, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    /// Points per interval of the time set.
    pub resolution: usize,
    pub n_paths: usize,
    pub deltagrid: Vec<f64>,
    pub seed: u64,
    /// Allowed distance between estimate and theory.
    pub band: f64,
    /// Cap on the pooled cloud size.
    pub pooled_max_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub spec: ProcessSpec,
    pub time_set: TimeSet,
    pub known_dim: f64,
    pub theory_dim: f64,
    /// Mean of the per-path slopes.
    pub est_dim: f64,
    pub est_ci: (f64, f64),
    pub per_path: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Box counts averaged over paths.
    pub mean_counts: Vec<f64>,
    pub pooled: Option<BoxCountEstimate>,
    pub band: f64,
    pub verdict: bool,
}

/// Simulates `X` exactly at the time-set points, fits a box dimension per
/// path and compares the average with the theoretical range dimension.
pub fn dimension_experiment(spec: &ProcessSpec, ts: &TimeSet, cfg: &DimensionConfig) -> Result<DimensionReport> {
    if cfg.n_paths < 2 {
        return Err(Error::InsufficientSamples(format!("need at least 2 paths, got {}", cfg.n_paths)));
    }
    let process = Process::new(spec.clone())?;
    let d = process.dim();
    let pts = time_set_points(ts, cfg.resolution)?;
    let dec = spectral_decompose(&exponent_of(spec)?, DEFAULT_CLUSTER_TOL)?;
    let theory_dim = theoretical_range_dim(&dec, pts.known_dim, d)?;

    let starts_at_zero = pts.times.first() == Some(&0.0);
    let grid: Vec<f64> = if starts_at_zero {
        pts.times.clone()
    } else {
        std::iter::once(0.0).chain(pts.times.iter().copied()).collect()
    };
    let skip = usize::from(!starts_at_zero);

    let per_path: Vec<(BoxCountEstimate, Option<PointSet>)> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = process.simulate(&grid, cfg.seed, i)?;
            let values = if skip == 0 {
                path.values
            } else {
                PointSet::new(d, path.values.coords()[d..].to_vec())?
            };
            let fit = box_dim_fit(&values, &cfg.deltagrid)?;
            let keep = (i as usize + 1) * values.len() <= cfg.pooled_max_points;
            Ok((fit, keep.then_some(values)))
        })
        .collect::<Result<_>>()?;

    let slopes: Vec<f64> = per_path.iter().map(|(f, _)| f.slope).collect();
    let (est_dim, se) = mean_stderr(&slopes);
    let half = t975((slopes.len() - 1) as f64) * se;
    let deltas = per_path[0].0.deltas.clone();
    let mean_counts = (0..deltas.len())
        .map(|k| compensated_sum(per_path.iter().map(|(f, _)| f.counts[k] as f64)) / slopes.len() as f64)
        .collect();

    let mut pooled_cloud: Option<PointSet> = None;
    for (_, cloud) in &per_path {
        if let Some(c) = cloud {
            match pooled_cloud.as_mut() {
                None => pooled_cloud = Some(c.clone()),
                Some(acc) => c.iter().for_each(|p| acc.push(p)),
            }
        }
    }
    let pooled = pooled_cloud.and_then(|c| box_dim_fit(&c, &cfg.deltagrid).ok());

    Ok(DimensionReport {
        spec: spec.clone(),
        time_set: ts.clone(),
        known_dim: pts.known_dim,
        theory_dim,
        est_dim,
        est_ci: (est_dim - half, est_dim + half),
        per_path: slopes,
        deltas,
        mean_counts,
        pooled,
        band: cfg.band,
        verdict: (est_dim - theory_dim).abs() <= cfg.band,
    })
}
