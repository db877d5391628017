//! Constructible operator semistable Lévy processes.
//!
//! Every process here is symmetric, hence strictly semistable without any
//! centering. Non-diagonal exponents arise only by conjugating products of
//! one-dimensional (or isotropic) building blocks with a mixing matrix.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, block_diag, ExponentMatrix, Matrix};
use crate::points::PointSet;
use crate::rng::{derive, Substream};
use crate::stats::{self, KsResult};

/// Default truncation level below which semistable jumps are replaced by a
/// Gaussian of matching variance.
pub const DEFAULT_TRUNCATION: f64 = 1e-4;

/// Largest tolerated condition number of a mixing matrix.
pub const MAX_MIXING_CONDITION: f64 = 1e6;

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ProcessSpec {
    /// Brownian motion with covariance `covariance` at time 1.
    Gaussian { covariance: Vec<Vec<f64>> },
    /// Symmetric alpha-stable with characteristic function
    /// `exp(-scale^alpha |theta|^alpha)`; rotationally invariant when `dim > 1`.
    StableMarginal {
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
    /// Symmetric one-dimensional semistable law with log-periodic Lévy tail
    /// `x^-alpha (1 + eta sin(2 pi alpha ln x / ln c))`.
    SemistableMarginal {
        alpha: f64,
        c: f64,
        eta: f64,
        #[serde(default = "default_truncation")]
        epsilon: f64,
    },
    /// Independent components stacked as a direct sum.
    Product { components: Vec<ProcessSpec> },
    /// `B X` for an inner process `X`.
    Conjugated {
        mixing: Vec<Vec<f64>>,
        inner: Box<ProcessSpec>,
    },
}

impl ProcessSpec {
    pub fn gaussian(covariance: Vec<Vec<f64>>) -> Result<Self> {
        let s = ProcessSpec::Gaussian { covariance };
        s.validate()?;
        Ok(s)
    }

    pub fn brownian(dim: usize) -> Self {
        let covariance = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        ProcessSpec::Gaussian { covariance }
    }

    pub fn stable(alpha: f64) -> Result<Self> {
        Self::isotropic_stable(alpha, 1.0, 1)
    }

    pub fn isotropic_stable(alpha: f64, scale: f64, dim: usize) -> Result<Self> {
        let s = ProcessSpec::StableMarginal { alpha, scale, dim };
        s.validate()?;
        Ok(s)
    }

    pub fn semistable(alpha: f64, c: f64, eta: f64, epsilon: f64) -> Result<Self> {
        let s = ProcessSpec::SemistableMarginal {
            alpha,
            c,
            eta,
            epsilon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn product(components: Vec<ProcessSpec>) -> Result<Self> {
        let s = ProcessSpec::Product { components };
        s.validate()?;
        Ok(s)
    }

    pub fn conjugated(mixing: Vec<Vec<f64>>, inner: ProcessSpec) -> Result<Self> {
        let s = ProcessSpec::Conjugated {
            mixing,
            inner: Box::new(inner),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            ProcessSpec::Gaussian { covariance } => covariance.len(),
            ProcessSpec::StableMarginal { dim, .. } => *dim,
            ProcessSpec::SemistableMarginal { .. } => 1,
            ProcessSpec::Product { components } => components.iter().map(|c| c.dim()).sum(),
            ProcessSpec::Conjugated { inner, .. } => inner.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        Sampler::compile(self).map(|_| ())
    }

    /// The scale base `c` of the discrete scaling law, if the process pins one.
    /// Stable and Gaussian parts scale for every `c > 1`.
    pub fn scale_base(&self) -> Option<f64> {
        match self {
            ProcessSpec::SemistableMarginal { c, .. } => Some(*c),
            ProcessSpec::Product { components } => components.iter().find_map(|s| s.scale_base()),
            ProcessSpec::Conjugated { inner, .. } => inner.scale_base(),
            _ => None,
        }
    }
}

/// Log-periodic tail `nu(x) = x^-alpha (1 + eta sin(2 pi alpha ln x / ln c))`
/// of the symmetric Lévy measure (mass of `|jump| > x`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFunction {
    alpha: f64,
    c: f64,
    eta: f64,
    freq: f64,
}

impl TailFunction {
    pub fn new(alpha: f64, c: f64, eta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidSpec(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        if !(c > 1.0 && c.is_finite()) {
            return Err(Error::InvalidSpec(format!("c must exceed 1, got {c}")));
        }
        let bound = Self::max_modulation(c);
        if !(eta.abs() <= bound * (1.0 + 1e-12)) {
            return Err(Error::InvalidSpec(format!(
                "|eta| = {} exceeds {bound}, the tail would not be monotone",
                eta.abs()
            )));
        }
        Ok(Self {
            alpha,
            c,
            eta,
            freq: 2.0 * PI * alpha / c.ln(),
        })
    }

    /// Largest modulation amplitude keeping the tail non-increasing.
    pub fn max_modulation(c: f64) -> f64 {
        let r = 2.0 * PI / c.ln();
        1.0 / (1.0 + r * r).sqrt()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn eval(&self, x: f64) -> f64 {
        let lx = x.ln();
        (-self.alpha * lx).exp() * (1.0 + self.eta * (self.freq * lx).sin())
    }

    /// Solves `nu(x) = level` by safeguarded Newton iteration on `ln x`.
    pub fn inverse(&self, level: f64) -> f64 {
        debug_assert!(level > 0.0);
        let ll = level.ln();
        let a = self.alpha;
        let amp = self.eta.abs();
        // nu(x) lies between (1 -+ |eta|) x^-alpha.
        let mut lo = ((1.0 - amp).ln() - ll) / a;
        let mut hi = ((1.0 + amp).ln() - ll) / a;
        if amp == 0.0 || !(hi > lo) {
            return (-ll / a).exp();
        }
        let g = |u: f64| -> (f64, f64) {
            let (s, c) = (self.freq * u).sin_cos();
            let m = 1.0 + self.eta * s;
            (-a * u + m.ln() - ll, -a + self.eta * self.freq * c / m)
        };
        let mut u = -ll / a;
        for _ in 0..100 {
            let (val, slope) = g(u);
            if val == 0.0 {
                break;
            }
            // g is non-increasing: a positive value means the root lies right.
            if val > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let mut next = if slope < 0.0 { u - val / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - u).abs();
            u = next;
            if step <= 1e-15 * u.abs().max(1.0) || hi - lo <= 1e-15 * u.abs().max(1.0) {
                break;
            }
        }
        u.exp()
    }

    /// `int_{|x| < eps} x^2 nu(dx)`, in closed form.
    pub fn small_jump_variance(&self, eps: f64) -> f64 {
        let a = self.alpha;
        let k = self.freq;
        let l = eps.ln();
        let p = 2.0 - a;
        let base = eps.powf(p);
        let (s, c) = (k * l).sin_cos();
        let integral = base / p + self.eta * base * (p * s - k * c) / (p * p + k * k);
        2.0 * integral - eps * eps * self.eval(eps)
    }
}

/// Table-driven tail inverse for the sampler. Levels are folded into one
/// period using `nu^-1(c L) = c^(-1/alpha) nu^-1(L)`, interpolated from a
/// table over `[1, c]` and polished by Newton steps.
#[derive(Debug, Clone)]
pub struct TailInverter {
    tail: TailFunction,
    log_c: f64,
    step: f64,
    /// `ln nu^-1(exp(k step))` for `k = 0..=INVERTER_NODES`.
    table: Vec<f64>,
}

const INVERTER_NODES: usize = 256;

impl TailInverter {
    pub fn new(tail: TailFunction) -> Self {
        let log_c = tail.c.ln();
        let step = log_c / INVERTER_NODES as f64;
        let table = (0..=INVERTER_NODES)
            .map(|k| tail.inverse((k as f64 * step).exp()).ln())
            .collect();
        Self {
            tail,
            log_c,
            step,
            table,
        }
    }

    pub fn inverse(&self, level: f64) -> f64 {
        let tf = &self.tail;
        let ll = level.ln();
        let periods = (ll / self.log_c).floor();
        let l0 = ll - periods * self.log_c;
        let pos = (l0 / self.step).clamp(0.0, INVERTER_NODES as f64 - 1e-9);
        let i = pos as usize;
        let f = pos - i as f64;
        let mut u = self.table[i] + f * (self.table[i + 1] - self.table[i]);
        if tf.eta == 0.0 {
            u = -l0 / tf.alpha;
        } else {
            // The root lies between the neighbouring nodes (u decreases in the level).
            let mut lo = self.table[i + 1] - 1e-9;
            let mut hi = self.table[i] + 1e-9;
            for _ in 0..200 {
                let (s, c) = (tf.freq * u).sin_cos();
                let m = 1.0 + tf.eta * s;
                let val = -tf.alpha * u + m.ln() - l0;
                if val > 0.0 {
                    lo = u;
                } else {
                    hi = u;
                }
                let slope = -tf.alpha + tf.eta * tf.freq * c / m;
                let next = u - val / slope;
                if slope < 0.0 && next > lo && next < hi {
                    let du = next - u;
                    u = next;
                    // Newton error after this step is about |g''/2g'| du^2.
                    let curv = tf.eta * tf.freq * tf.freq * (s * m + tf.eta * c * c) / (m * m);
                    if du.abs() <= 1e-6 && (curv / (2.0 * slope)).abs() * du * du <= 1e-15 * u.abs().max(1.0) {
                        break;
                    }
                } else {
                    u = 0.5 * (lo + hi);
                    if hi - lo <= 1e-15 * u.abs().max(1.0) {
                        break;
                    }
                }
            }
        }
        (u - periods * self.log_c / tf.alpha).exp()
    }
}

/// Scale `sigma` making `StableMarginal { alpha, scale: sigma }` equal in law
/// to the shot-noise process with tail `x^-alpha` (the `eta = 0` semistable
/// law): `sigma^alpha = Gamma(1 - alpha) cos(pi alpha / 2)`.
pub fn pure_tail_stable_scale(alpha: f64) -> f64 {
    let gamma_one_minus = statrs::function::gamma::gamma(2.0 - alpha) / (1.0 - alpha);
    (gamma_one_minus * (PI * alpha / 2.0).cos()).powf(1.0 / alpha)
}

pub fn tail_inverse(tf: &TailFunction, level: f64) -> Result<f64> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::Domain(format!("tail level must be positive, got {level}")));
    }
    Ok(tf.inverse(level))
}

/// A `ProcessSpec` compiled into ready-to-sample form.
#[derive(Debug, Clone)]
enum Sampler {
    Gaussian {
        chol: Matrix,
    },
    Stable {
        alpha: f64,
        scale: f64,
        dim: usize,
    },
    Semistable {
        inverter: TailInverter,
        /// Rate of jumps larger than epsilon per unit time.
        big_rate: f64,
        small_var: f64,
    },
    Product(Vec<Sampler>),
    Conjugated {
        mixing: Matrix,
        inner: Box<Sampler>,
    },
}

impl Sampler {
    fn compile(spec: &ProcessSpec) -> Result<Self> {
        match spec {
            ProcessSpec::Gaussian { covariance } => {
                let sigma = linops::matrix_from_rows(covariance)?;
                if sigma.nrows() == 0 || sigma.nrows() != sigma.ncols() {
                    return Err(Error::InvalidSpec("covariance must be square and non-empty".into()));
                }
                if sigma.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidSpec("covariance has non-finite entries".into()));
                }
                let asym = (&sigma - sigma.transpose()).norm();
                if asym > 1e-12 * sigma.norm().max(1.0) {
                    return Err(Error::InvalidSpec("covariance is not symmetric".into()));
                }
                let chol = sigma
                    .cholesky()
                    .ok_or_else(|| Error::InvalidSpec("covariance is not positive definite".into()))?;
                Ok(Sampler::Gaussian { chol: chol.l() })
            }
            &ProcessSpec::StableMarginal { alpha, scale, dim } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return Err(Error::InvalidSpec(format!("alpha must lie in (0, 2), got {alpha}")));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidSpec(format!("scale must be positive, got {scale}")));
                }
                if dim == 0 {
                    return Err(Error::InvalidSpec("dimension must be >= 1".into()));
                }
                Ok(Sampler::Stable { alpha, scale, dim })
            }
            &ProcessSpec::SemistableMarginal {
                alpha,
                c,
                eta,
                epsilon,
            } => {
                let tail = TailFunction::new(alpha, c, eta)?;
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "truncation must be positive, got {epsilon}"
                    )));
                }
                Ok(Sampler::Semistable {
                    inverter: TailInverter::new(tail),
                    big_rate: tail.eval(epsilon),
                    small_var: tail.small_jump_variance(epsilon),
                })
            }
            ProcessSpec::Product { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidSpec("product needs at least one component".into()));
                }
                let bases: Vec<f64> = components.iter().filter_map(|s| s.scale_base()).collect();
                if bases.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12 * w[0]) {
                    return Err(Error::InvalidSpec(format!(
                        "semistable components use different scale bases {bases:?}"
                    )));
                }
                Ok(Sampler::Product(
                    components.iter().map(Sampler::compile).collect::<Result<_>>()?,
                ))
            }
            ProcessSpec::Conjugated { mixing, inner } => {
                let b = linops::matrix_from_rows(mixing)?;
                let d = inner.dim();
                if b.nrows() != d || b.ncols() != d {
                    return Err(Error::InvalidSpec(format!(
                        "mixing matrix must be {d}x{d}, got {}x{}",
                        b.nrows(),
                        b.ncols()
                    )));
                }
                if b.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidSpec("mixing matrix has non-finite entries".into()));
                }
                let sv = b.singular_values();
                let smax = sv.max();
                let smin = sv.min();
                if !(smin > 0.0) || smax / smin >= MAX_MIXING_CONDITION {
                    return Err(Error::InvalidSpec(format!(
                        "mixing matrix condition number {} is too large",
                        smax / smin
                    )));
                }
                Ok(Sampler::Conjugated {
                    mixing: b,
                    inner: Box::new(Sampler::compile(inner)?),
                })
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Sampler::Gaussian { chol } => chol.nrows(),
            Sampler::Stable { dim, .. } => *dim,
            Sampler::Semistable { .. } => 1,
            Sampler::Product(parts) => parts.iter().map(Sampler::dim).sum(),
            Sampler::Conjugated { inner, .. } => inner.dim(),
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        match self {
            Sampler::Gaussian { chol } => {
                let d = chol.nrows();
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = chol * z * dt.sqrt();
                out.copy_from_slice(x.as_slice());
            }
            &Sampler::Stable { alpha, scale, dim } => {
                let s = scale * dt.powf(1.0 / alpha);
                if dim == 1 {
                    out[0] = s * symmetric_stable(alpha, rng);
                } else {
                    let r = s * (2.0 * positive_stable(alpha / 2.0, rng)).sqrt();
                    for x in out.iter_mut() {
                        *x = r * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            Sampler::Semistable {
                inverter,
                big_rate,
                small_var,
                ..
            } => {
                let horizon = dt * big_rate;
                let mut arrival = 0.0;
                let mut jumps = Vec::new();
                loop {
                    arrival += rng.sample::<f64, _>(Exp1);
                    if arrival >= horizon {
                        break;
                    }
                    let size = inverter.inverse(arrival / dt);
                    jumps.push(if rng.random::<bool>() { size } else { -size });
                }
                // Sum smallest jumps first.
                let big = jumps.iter().rev().fold(0.0, |acc, j| acc + j);
                let small = (dt * small_var).sqrt() * rng.sample::<f64, _>(StandardNormal);
                out[0] = big + small;
            }
            Sampler::Product(parts) => {
                let mut off = 0;
                for p in parts {
                    let k = p.dim();
                    p.sample_into(dt, rng, &mut out[off..off + k]);
                    off += k;
                }
            }
            Sampler::Conjugated { mixing, inner } => {
                let d = out.len();
                let mut tmp = vec![0.0; d];
                inner.sample_into(dt, rng, &mut tmp);
                apply(mixing, &tmp, out);
            }
        }
    }
}

fn apply(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..x.len()).map(|j| m[(i, j)] * x[j]).sum();
    }
}

/// Uniform on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard symmetric stable variate, characteristic function
/// `exp(-|theta|^alpha)` (Chambers–Mallows–Stuck).
pub fn symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (open_unit(rng) - 0.5);
    let w: f64 = rng.sample(Exp1);
    let w = w.max(f64::MIN_POSITIVE);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * ((v * (1.0 - alpha)).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Totally skewed positive stable variate of index `a in (0, 1)` with
/// Laplace transform `exp(-s^a)` (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let v = PI * open_unit(rng);
    let w: f64 = rng.sample(Exp1);
    let w = w.max(f64::MIN_POSITIVE);
    (a * v).sin() / v.sin().powf(1.0 / a) * (((1.0 - a) * v).sin() / w).powf((1.0 - a) / a)
}

/// A validated `ProcessSpec` together with its compiled sampler.
#[derive(Debug, Clone)]
pub struct Process {
    spec: ProcessSpec,
    sampler: Sampler,
}

impl Process {
    pub fn new(spec: ProcessSpec) -> Result<Self> {
        let sampler = Sampler::compile(&spec)?;
        Ok(Self { spec, sampler })
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.sampler.dim()
    }

    pub fn exponent(&self) -> Result<ExponentMatrix> {
        exponent_of(&self.spec)
    }

    /// One draw of `X(dt)` into `out`.
    pub fn sample_increment_into<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if out.len() != self.dim() {
            return Err(Error::Shape("output buffer dimension mismatch".into()));
        }
        check_supported(&self.spec)?;
        self.sampler.sample_into(dt, rng, out);
        Ok(())
    }

    /// `n` independent draws of `X(t)`, draw `i` using stream `(seed, i, 0)`.
    pub fn sample_marginal(&self, t: f64, n: usize, seed: u64) -> Result<PointSet> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("t must be positive, got {t}")));
        }
        check_supported(&self.spec)?;
        let d = self.dim();
        let mut coords = vec![0.0; n * d];
        coords.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
            let mut rng = Substream::new(seed, i as u64, 0);
            self.sampler.sample_into(t, &mut rng, out);
        });
        PointSet::new(d, coords)
    }

    /// Path number `path_index` on `grid`; step `k` draws from stream
    /// `(seed, path_index, k)`.
    pub fn simulate(&self, grid: &[f64], seed: u64, path_index: u64) -> Result<Path> {
        check_grid(grid)?;
        check_supported(&self.spec)?;
        let values = self.simulate_values(&self.sampler, grid, seed, path_index);
        Ok(Path {
            times: grid.to_vec(),
            values,
            seed,
            spec: self.spec.clone(),
        })
    }

    fn simulate_values(&self, sampler: &Sampler, grid: &[f64], seed: u64, path_index: u64) -> PointSet {
        if let Sampler::Conjugated { mixing, inner } = sampler {
            let base = self.simulate_values(inner, grid, seed, path_index);
            return base.map(base.dim(), |x, out| apply(mixing, x, out));
        }
        let d = sampler.dim();
        let mut values = PointSet::with_capacity(d, grid.len());
        let mut pos = vec![0.0; d];
        let mut inc = vec![0.0; d];
        values.push(&pos);
        for (k, w) in grid.windows(2).enumerate() {
            let mut rng = Substream::new(seed, path_index, k as u64);
            sampler.sample_into(w[1] - w[0], &mut rng, &mut inc);
            for (p, x) in pos.iter_mut().zip(&inc) {
                *p += x;
            }
            values.push(&pos);
        }
        values
    }
}

fn check_supported(spec: &ProcessSpec) -> Result<()> {
    match spec {
        ProcessSpec::SemistableMarginal { alpha, .. } if *alpha == 1.0 => Err(Error::Unsupported(
            "semistable marginals with alpha = 1 need a centering term".into(),
        )),
        ProcessSpec::Product { components } => components.iter().try_for_each(check_supported),
        ProcessSpec::Conjugated { inner, .. } => check_supported(inner),
        _ => Ok(()),
    }
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    match grid.first() {
        Some(&t0) if t0 == 0.0 => {}
        _ => return Err(Error::Domain("time grid must start at 0".into())),
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `0, dt, 2 dt, ..., s`; the horizon is hit exactly, the last step absorbs
/// any remainder smaller than `dt`.
pub fn uniform_grid(s: f64, dt: f64) -> Result<Vec<f64>> {
    if !(s > 0.0 && dt > 0.0 && dt <= s) {
        return Err(Error::Domain(format!("need 0 < dt <= s, got dt = {dt}, s = {s}")));
    }
    let ratio = s / dt;
    let n = if (ratio - ratio.round()).abs() < 1e-9 * ratio {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let mut grid: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    grid.push(s);
    Ok(grid)
}

/// A seeded sample path on a time grid, starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub values: PointSet,
    pub seed: u64,
    pub spec: ProcessSpec,
}

impl Path {
    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

/// The exponent `E` for which the process satisfies `X(ct) = c^E X(t)` in law.
pub fn exponent_of(spec: &ProcessSpec) -> Result<ExponentMatrix> {
    ExponentMatrix::new(exponent_matrix(spec)?)
}

fn exponent_matrix(spec: &ProcessSpec) -> Result<Matrix> {
    Ok(match spec {
        ProcessSpec::Gaussian { covariance } => Matrix::identity(covariance.len(), covariance.len()) * 0.5,
        ProcessSpec::StableMarginal { alpha, dim, .. } => Matrix::identity(*dim, *dim) / *alpha,
        ProcessSpec::SemistableMarginal { alpha, .. } => Matrix::from_element(1, 1, 1.0 / alpha),
        ProcessSpec::Product { components } => {
            block_diag(&components.iter().map(exponent_matrix).collect::<Result<Vec<_>>>()?)
        }
        ProcessSpec::Conjugated { mixing, inner } => {
            let b = linops::matrix_from_rows(mixing)?;
            let binv = b
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidSpec("mixing matrix is singular".into()))?;
            b * exponent_matrix(inner)? * binv
        }
    })
}

pub fn sample_increment<R: Rng + ?Sized>(spec: &ProcessSpec, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    let p = Process::new(spec.clone())?;
    let mut out = vec![0.0; p.dim()];
    p.sample_increment_into(dt, rng, &mut out)?;
    Ok(out)
}

pub fn simulate_path(spec: &ProcessSpec, grid: &[f64], seed: u64) -> Result<Path> {
    Process::new(spec.clone())?.simulate(grid, seed, 0)
}

pub use crate::stats::ecf_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTest {
    pub direction: Vec<f64>,
    pub ks: KsResult,
    /// Bonferroni-adjusted p-value.
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub c: f64,
    pub t: f64,
    pub n: usize,
    pub exponent: Vec<Vec<f64>>,
    pub projections: Vec<ProjectionTest>,
    pub min_adjusted_p: f64,
    pub ecf_distance: f64,
    pub level: f64,
    pub pass: bool,
}

/// Number of one-dimensional KS comparisons made by the scaling check.
pub const SCALING_PROJECTIONS: usize = 5;
pub const SCALING_LEVEL: f64 = 0.01;

/// Compares `n` draws of `X(c t)` with `n` independent draws of `c^E X(t)`.
pub fn scaling_check(spec: &ProcessSpec, t: f64, n: usize, seed: u64) -> Result<ScalingReport> {
    let e = exponent_of(spec)?;
    scaling_check_with_exponent(spec, &e, t, n, seed)
}

/// As [`scaling_check`] but with an arbitrary exponent in place of the
/// process's own, e.g. to confirm that a wrong exponent is rejected.
pub fn scaling_check_with_exponent(
    spec: &ProcessSpec,
    exponent: &ExponentMatrix,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<ScalingReport> {
    let mut reports = scaling_check_exponents(spec, std::slice::from_ref(exponent), t, n, seed)?;
    Ok(reports.remove(0))
}

/// Runs the scaling comparison for several candidate exponents on one shared
/// pair of samples.
pub fn scaling_check_exponents(
    spec: &ProcessSpec,
    exponents: &[ExponentMatrix],
    t: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<ScalingReport>> {
    if n < 1000 {
        return Err(Error::InsufficientSamples(format!("scaling check needs n >= 1000, got {n}")));
    }
    let process = Process::new(spec.clone())?;
    let d = process.dim();
    if exponents.iter().any(|e| e.dim() != d) {
        return Err(Error::Shape("exponent dimension does not match the process".into()));
    }
    let c = spec.scale_base().unwrap_or(2.0);
    let scaled = process.sample_marginal(c * t, n, derive(seed, 0))?;
    let base = process.sample_marginal(t, n, derive(seed, 1))?;
    let directions = projection_directions(d, derive(seed, 2));
    exponents
        .iter()
        .map(|e| compare_scaled(&scaled, &base, e, &directions, c, t))
        .collect()
}

fn compare_scaled(
    scaled: &PointSet,
    base: &PointSet,
    exponent: &ExponentMatrix,
    directions: &[Vec<f64>],
    c: f64,
    t: f64,
) -> Result<ScalingReport> {
    let m = linops::t_power(exponent, c)?;
    let mapped = base.map(base.dim(), |x, out| apply(&m, x, out));
    let tests = directions.len() as f64;
    let mut projections = Vec::with_capacity(directions.len());
    let mut thetas = Vec::new();
    for u in directions {
        let a = scaled.project(u);
        let b = mapped.project(u);
        let ks = stats::ks_two_sample(&a, &b)?;
        let mut abs: Vec<f64> = a.iter().map(|x| x.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let spread = abs[abs.len() / 2].max(f64::MIN_POSITIVE);
        for r in [0.5, 1.0, 2.0] {
            thetas.push(u.iter().map(|x| x * r / spread).collect::<Vec<_>>());
        }
        projections.push(ProjectionTest {
            direction: u.clone(),
            adjusted_p: (ks.p_value * tests).min(1.0),
            ks,
        });
    }
    let ecf = ecf_distance(scaled, &mapped, &thetas)?;
    let min_adjusted_p = projections
        .iter()
        .map(|p| p.adjusted_p)
        .fold(1.0, f64::min);
    Ok(ScalingReport {
        c,
        t,
        n: scaled.len(),
        exponent: linops::matrix_to_rows(exponent.matrix()),
        projections,
        min_adjusted_p,
        ecf_distance: ecf,
        level: SCALING_LEVEL,
        pass: min_adjusted_p > SCALING_LEVEL,
    })
}

/// Coordinate axes first, then seeded random unit vectors, five in total.
fn projection_directions(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..d.min(SCALING_PROJECTIONS))
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut k = 0u64;
    while dirs.len() < SCALING_PROJECTIONS {
        let mut rng = Substream::new(seed, k, 0);
        k += 1;
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let nrm = crate::points::norm(&v);
        if nrm > 1e-8 {
            dirs.push(v.iter().map(|x| x / nrm).collect());
        }
    }
    dirs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponent_examples() {
        let e = exponent_of(&ProcessSpec::brownian(2)).unwrap();
        assert_eq!(e.matrix(), &(Matrix::identity(2, 2) * 0.5));

        let p = ProcessSpec::product(vec![ProcessSpec::stable(1.8).unwrap(), ProcessSpec::stable(0.9).unwrap()]).unwrap();
        let e = exponent_of(&p).unwrap();
        assert_relative_eq!(e.matrix()[(0, 0)], 1.0 / 1.8);
        assert_relative_eq!(e.matrix()[(1, 1)], 1.0 / 0.9);
        assert_eq!(e.matrix()[(0, 1)], 0.0);

        let b = vec![vec![1.0, 0.5], vec![-0.25, 2.0]];
        let conj = ProcessSpec::conjugated(b.clone(), p).unwrap();
        let e = exponent_of(&conj).unwrap();
        // B diag(u, v) B^-1 by hand: det B = 2.125.
        let (u, v) = (1.0 / 1.8, 1.0 / 0.9);
        let det = 2.125;
        let want = [
            [(2.0 * u + 0.125 * v) / det, (-0.5 * u + 0.5 * v) / det],
            [(-0.5 * u + 0.5 * v) / det, (0.125 * u + 2.0 * v) / det],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(e.matrix()[(i, j)], want[i][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ProcessSpec::gaussian(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(ProcessSpec::gaussian(vec![vec![1.0, 0.1], vec![0.2, 1.0]]).is_err());
        assert!(ProcessSpec::stable(2.0).is_err());
        assert!(ProcessSpec::semistable(1.5, 2.0, 0.2, 1e-3).is_err());
        assert!(ProcessSpec::semistable(1.5, 2.0, 0.1, 1e-3).is_ok());
        assert!(ProcessSpec::semistable(1.5, 1.0, 0.0, 1e-3).is_err());
        let inner = ProcessSpec::brownian(2);
        assert!(ProcessSpec::conjugated(vec![vec![1.0, 0.0], vec![0.0, 1e-7]], inner.clone()).is_err());
        assert!(ProcessSpec::conjugated(vec![vec![1.0, 0.0, 0.0]], inner).is_err());
        let mixed = ProcessSpec::product(vec![
            ProcessSpec::semistable(1.5, 2.0, 0.1, 1e-3).unwrap(),
            ProcessSpec::semistable(1.2, 3.0, 0.1, 1e-3).unwrap(),
        ]);
        assert!(mixed.is_err());
    }

    #[test]
    fn spec_json_shape() {
        let s = ProcessSpec::semistable(1.5, 2.0, 0.1, 0.01).unwrap();
        let j = serde_json::to_value(&s).unwrap();
        assert_eq!(j["kind"], "SemistableMarginal");
        let back: ProcessSpec = serde_json::from_value(j).unwrap();
        assert_eq!(back, s);
        let parsed: ProcessSpec = serde_json::from_str(r#"{"kind":"StableMarginal","alpha":1.5,"dim":2}"#).unwrap();
        assert_eq!(parsed, ProcessSpec::StableMarginal { alpha: 1.5, scale: 1.0, dim: 2 });
        assert!(serde_json::from_str::<ProcessSpec>(r#"{"kind":"StableMarginal","alpha":1.5,"bogus":1}"#).is_err());
    }

    #[test]
    fn tail_inverse_closed_form() {
        let tf = TailFunction::new(1.5, 2.0, 0.0).unwrap();
        assert_relative_eq!(tail_inverse(&tf, 8.0).unwrap(), 0.25, max_relative = 1e-14);
    }

    #[test]
    fn tail_is_log_periodic() {
        let tf = TailFunction::new(1.5, 2.0, 0.1).unwrap();
        let shift = 2f64.powf(1.0 / 1.5);
        for k in -40..=40 {
            let x = 1.37f64.powi(k);
            let lhs = tf.eval(x * shift) * 2.0;
            assert_relative_eq!(lhs, tf.eval(x), max_relative = 1e-12);
        }
    }

    #[test]
    fn tail_inverse_round_trip_and_monotone() {
        let bound = TailFunction::max_modulation(3.0);
        for &(alpha, c, eta) in &[(1.5, 2.0, 0.1), (0.7, 3.0, bound), (1.9, 1.5, -0.05)] {
            let tf = TailFunction::new(alpha, c, eta).unwrap();
            let mut prev = f64::INFINITY;
            for k in -60..=60 {
                let level = 1.3f64.powi(k);
                let x = tail_inverse(&tf, level).unwrap();
                assert_relative_eq!(tf.eval(x), level, max_relative = 1e-10);
                assert!(x < prev);
                prev = x;
            }
        }
    }

    #[test]
    fn table_inverse_matches_solver() {
        let bound = TailFunction::max_modulation(2.0);
        for &(alpha, c, eta) in &[(1.5, 2.0, 0.1), (1.5, 2.0, bound), (0.7, 3.0, -0.15), (1.2, 5.0, 0.0)] {
            let tf = TailFunction::new(alpha, c, eta).unwrap();
            let inv = TailInverter::new(tf);
            for k in -400..=400 {
                let level = 1.0713f64.powi(k);
                let want = tf.inverse(level);
                let got = inv.inverse(level);
                assert!(((got - want) / want).abs() < 1e-12, "{alpha} {c} {eta} {level}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn tail_rejects_excess_modulation() {
        let bound = TailFunction::max_modulation(2.0);
        assert!(TailFunction::new(1.5, 2.0, bound * 1.01).is_err());
        // The bound itself keeps the tail non-increasing.
        let tf = TailFunction::new(1.5, 2.0, bound).unwrap();
        let xs: Vec<f64> = (0..4000).map(|k| 1e-3 * 1.003f64.powi(k)).collect();
        assert!(xs.windows(2).all(|w| tf.eval(w[1]) <= tf.eval(w[0]) * (1.0 + 1e-12)));
    }

    #[test]
    fn small_jump_variance_matches_quadrature() {
        // int_0^eps 2 x nu(x) dx - eps^2 nu(eps) by Simpson in log x.
        for &(alpha, c, eta, eps) in &[(1.5, 2.0, 0.1, 0.05), (0.8, 3.0, -0.15, 0.01), (1.2, 2.0, 0.0, 0.3f64)] {
            let tf = TailFunction::new(alpha, c, eta).unwrap();
            let (lo, hi) = (eps.ln() - 60.0, eps.ln());
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let f = |u: f64| {
                let x = u.exp();
                2.0 * x * tf.eval(x) * x
            };
            let mut s = f(lo) + f(hi);
            for k in 1..n {
                s += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = s * h / 3.0 - eps * eps * tf.eval(eps);
            assert_relative_eq!(tf.small_jump_variance(eps), quad, max_relative = 1e-9);
        }
    }

    #[test]
    fn pure_tail_scale_matches_quadrature() {
        // sigma^alpha = alpha int_0^inf (1 - cos u) u^(-1-alpha) du; for
        // alpha = 1.5 the integral is 4 sqrt(pi) / 3 * (sqrt(2)/2) / 1.5 ...
        // evaluated independently as 2.5066282746 (= sqrt(2 pi)).
        assert_relative_eq!(pure_tail_stable_scale(1.5).powf(1.5), (2.0 * PI).sqrt(), max_relative = 1e-10);
        // alpha = 0.5: Gamma(1/2) cos(pi/4) = sqrt(pi/2).
        assert_relative_eq!(pure_tail_stable_scale(0.5).powf(0.5), (PI / 2.0).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn gaussian_moments() {
        let p = Process::new(ProcessSpec::brownian(2)).unwrap();
        let s = p.sample_marginal(1.0, 100_000, 7).unwrap();
        let n = s.len() as f64;
        let mean: Vec<f64> = (0..2).map(|k| s.iter().map(|x| x[k]).sum::<f64>() / n).collect();
        for m in &mean {
            assert!(m.abs() < 0.02, "mean {m}");
        }
        for (i, j, want) in [(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.0)] {
            let c = s.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (n - 1.0);
            assert!((c - want).abs() < 0.03, "cov[{i}{j}] = {c}");
        }
    }

    #[test]
    fn stable_cf_at_one() {
        let p = Process::new(ProcessSpec::stable(1.5).unwrap()).unwrap();
        let s = p.sample_marginal(1.0, 100_000, 11).unwrap();
        let (re, im) = stats::empirical_cf(&s, &[1.0]);
        assert!((re - (-1.0f64).exp()).abs() < 0.01, "re {re}");
        assert!(im.abs() < 0.01);
    }

    #[test]
    fn isotropic_stable_cf() {
        let p = Process::new(ProcessSpec::isotropic_stable(1.2, 1.0, 2).unwrap()).unwrap();
        let s = p.sample_marginal(1.0, 100_000, 12).unwrap();
        for theta in [[1.0, 0.0], [0.0, 0.5], [0.6, -0.8]] {
            let r = (theta[0] * theta[0] + theta[1] * theta[1] as f64).sqrt();
            let (re, _) = stats::empirical_cf(&s, &theta);
            assert!((re - (-r.powf(1.2)).exp()).abs() < 0.01, "{theta:?}: {re}");
        }
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = Substream::new(5, 0, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| positive_stable(0.75, &mut rng)).collect();
        for s in [0.5, 1.0, 2.0] {
            let lt = xs.iter().map(|x| (-s * x).exp()).sum::<f64>() / n as f64;
            assert!((lt - (-(s as f64).powf(0.75)).exp()).abs() < 0.005);
        }
    }

    #[test]
    fn semistable_without_modulation_is_stable() {
        let alpha = 1.5;
        let semi = Process::new(ProcessSpec::semistable(alpha, 2.0, 0.0, 0.05).unwrap()).unwrap();
        let stable = Process::new(ProcessSpec::isotropic_stable(alpha, pure_tail_stable_scale(alpha), 1).unwrap()).unwrap();
        let n = 100_000;
        let a = semi.sample_marginal(1.0, n, 1).unwrap();
        let b = stable.sample_marginal(1.0, n, 2).unwrap();
        let thetas: Vec<Vec<f64>> = [0.1, 0.25, 0.5, 1.0, 2.0].iter().map(|t| vec![*t]).collect();
        let d = ecf_distance(&a, &b, &thetas).unwrap();
        assert!(d < 0.01, "ecf distance {d}");
        assert!(d < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn semistable_alpha_one_is_unsupported() {
        let spec = ProcessSpec::SemistableMarginal { alpha: 1.0, c: 2.0, eta: 0.0, epsilon: 0.1 };
        let p = Process::new(spec).unwrap();
        let mut rng = Substream::new(0, 0, 0);
        let mut out = [0.0];
        assert!(matches!(p.sample_increment_into(1.0, &mut rng, &mut out), Err(Error::Unsupported(_))));
    }

    #[test]
    fn single_point_grid() {
        let path = simulate_path(&ProcessSpec::brownian(3), &[0.0], 1).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.values.point(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = ProcessSpec::product(vec![
            ProcessSpec::semistable(1.5, 2.0, 0.1, 0.05).unwrap(),
            ProcessSpec::stable(0.9).unwrap(),
        ])
        .unwrap();
        let grid = uniform_grid(1.0, 1.0 / 64.0).unwrap();
        let a = simulate_path(&spec, &grid, 99).unwrap();
        let b = simulate_path(&spec, &grid, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&spec, &grid, 100).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn bad_grids_are_rejected() {
        let spec = ProcessSpec::brownian(1);
        assert!(matches!(simulate_path(&spec, &[0.0, 0.5, 0.5], 1), Err(Error::Domain(_))));
        assert!(matches!(simulate_path(&spec, &[0.1, 0.5], 1), Err(Error::Domain(_))));
        assert!(matches!(simulate_path(&spec, &[], 1), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_grid_hits_horizon() {
        let g = uniform_grid(1.0, 0.25).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = uniform_grid(1.0, 0.3).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn brownian_variance_at_one() {
        let p = Process::new(ProcessSpec::brownian(1)).unwrap();
        let grid = uniform_grid(1.0, 1.0 / 1024.0).unwrap();
        let ends: Vec<f64> = (0..2000)
            .map(|i| {
                let path = p.simulate(&grid, 3, i).unwrap();
                path.values.point(path.len() - 1)[0]
            })
            .collect();
        let var = ends.iter().map(|x| x * x).sum::<f64>() / ends.len() as f64;
        assert!((var - 1.0).abs() < 0.07, "var {var}");
    }

    #[test]
    fn ecf_distance_gaussian_closed_form() {
        let n = 100_000;
        let a = Process::new(ProcessSpec::brownian(1)).unwrap().sample_marginal(1.0, n, 1).unwrap();
        let b = Process::new(ProcessSpec::gaussian(vec![vec![4.0]]).unwrap())
            .unwrap()
            .sample_marginal(1.0, n, 2)
            .unwrap();
        let d = ecf_distance(&a, &b, &[vec![1.0]]).unwrap();
        assert!((d - 0.4711953764760207).abs() < 0.02, "{d}");
        let c = Process::new(ProcessSpec::brownian(1)).unwrap().sample_marginal(1.0, n, 3).unwrap();
        assert!(ecf_distance(&a, &c, &[vec![0.5], vec![1.0], vec![2.0]]).unwrap() < 0.02);
    }

    #[test]
    fn gaussian_scaling_passes() {
        let r = scaling_check(&ProcessSpec::brownian(2), 1.0, 20_000, 5).unwrap();
        assert_eq!(r.c, 2.0);
        assert_eq!(r.projections.len(), SCALING_PROJECTIONS);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn scaling_check_requires_samples() {
        assert!(matches!(
            scaling_check(&ProcessSpec::brownian(1), 1.0, 10, 5),
            Err(Error::InsufficientSamples(_))
        ));
    }
}
