//! Random exponents with known spectral structure, and residuals of the
//! operator laws `t^E s^E = (ts)^E` and friends.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{block_diag, spectral_decompose, t_power, ExponentMatrix, Matrix, SpectralDecomposition};

/// Clustering tolerance for zoo exponents. Their levels sit at least 0.1
/// apart, while rounding splits the eigenvalue of a defective block by about
/// the square root of machine epsilon, which can exceed the default.
pub const ZOO_CLUSTER_TOL: f64 = 1e-5;

/// An exponent built as `B blockdiag(...) B^-1` from scalar, rotation and
/// 2x2 Jordan blocks, together with its true real parts and block sizes.
#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub exponent: ExponentMatrix,
    pub a: Vec<f64>,
    pub dblock: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Block {
    Scalar,
    Rotation,
    Jordan,
}

fn well_conditioned<R: Rng + ?Sized>(rng: &mut R, d: usize, max_cond: f64) -> Matrix {
    loop {
        let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = Matrix::identity(d, d) + g * 0.3;
        let sv = b.singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() < max_cond {
            return b;
        }
    }
}

/// Real parts lie in `[0.55, 2]` with gaps of at least 0.1 between levels.
pub fn random_exponent<R: Rng + ?Sized>(rng: &mut R, d: usize) -> ZooEntry {
    assert!(d >= 1);
    let mut kinds = Vec::new();
    let mut left = d;
    while left > 0 {
        let k = if left >= 2 { rng.random_range(0..3) } else { 0 };
        let kind = [Block::Scalar, Block::Rotation, Block::Jordan][k];
        left -= if k == 0 { 1 } else { 2 };
        kinds.push(kind);
    }
    let mut slots: Vec<usize> = (0..12).collect();
    let levels: Vec<f64> = (0..kinds.len())
        .map(|_| {
            let j = slots.swap_remove(rng.random_range(0..slots.len()));
            0.55 + 0.12 * j as f64 + rng.random_range(0.0..0.02)
        })
        .collect();
    // Let several blocks share a level now and then.
    let assign: Vec<usize> = (0..kinds.len()).map(|_| rng.random_range(0..kinds.len())).collect();

    let mut blocks = Vec::new();
    let mut per_level: Vec<(f64, usize)> = Vec::new();
    for (kind, &lv) in kinds.iter().zip(&assign) {
        let a = levels[lv];
        let (m, size) = match kind {
            Block::Scalar => (Matrix::from_element(1, 1, a), 1),
            Block::Rotation => {
                let b = rng.random_range(0.3..2.0);
                (Matrix::from_row_slice(2, 2, &[a, -b, b, a]), 2)
            }
            Block::Jordan => {
                let s = rng.random_range(0.5..1.5);
                (Matrix::from_row_slice(2, 2, &[a, s, 0.0, a]), 2)
            }
        };
        blocks.push(m);
        match per_level.iter_mut().find(|(x, _)| *x == a) {
            Some(entry) => entry.1 += size,
            None => per_level.push((a, size)),
        }
    }
    per_level.sort_by(|x, y| x.0.total_cmp(&y.0));
    let b = well_conditioned(rng, d, 20.0);
    let binv = b.clone().try_inverse().expect("well-conditioned");
    let e = &b * block_diag(&blocks) * binv;
    ZooEntry {
        exponent: ExponentMatrix::new(e).expect("zoo exponents are valid"),
        a: per_level.iter().map(|x| x.0).collect(),
        dblock: per_level.iter().map(|x| x.1).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawResiduals {
    /// `|t^E s^E - (ts)^E|_F`, relative.
    pub group: f64,
    /// `|t^E t^-E - I|_F`
    pub inverse: f64,
    /// `|Q blockdiag(E_j) Q^-1 - E|_F` and the same for `t^E`, relative.
    pub block: f64,
    /// Largest change in the real parts after a random change of basis.
    pub conjugation: f64,
    /// Largest distance between decomposed and true real parts.
    pub real_parts: f64,
    /// Block sizes agree before and after conjugation and with the truth.
    pub dblock_match: bool,
}

impl LawResiduals {
    pub fn max(&self) -> f64 {
        [self.group, self.inverse, self.block, self.conjugation, self.real_parts]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn pass(&self, tol: f64) -> bool {
        self.dblock_match && self.max() <= tol
    }
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn block_power(dec: &SpectralDecomposition, t: f64) -> Result<Matrix> {
    let powers = dec
        .blocks
        .iter()
        .map(|b| crate::linops::t_power_raw(b, t))
        .collect::<Result<Vec<_>>>()?;
    let qinv = dec
        .basis
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("basis is singular".into()))?;
    Ok(&dec.basis * block_diag(&powers) * qinv)
}

/// Residuals of the operator laws over all pairs from `ts`.
pub fn law_residuals<R: Rng + ?Sized>(entry: &ZooEntry, ts: &[f64], tol: f64, rng: &mut R) -> Result<LawResiduals> {
    let e = &entry.exponent;
    let d = e.dim();
    let id = Matrix::identity(d, d);
    let mut group: f64 = 0.0;
    let mut inverse: f64 = 0.0;
    for &t in ts {
        let pt = t_power(e, t)?;
        inverse = inverse.max((&pt * t_power(e, 1.0 / t)? - &id).norm());
        for &s in ts {
            group = group.max(rel(&(&pt * t_power(e, s)?), &t_power(e, t * s)?));
        }
    }
    let dec = spectral_decompose(e, tol)?;
    let mut block = rel(&dec.reconstruct()?, e.matrix());
    for &t in ts {
        block = block.max(rel(&block_power(&dec, t)?, &t_power(e, t)?));
    }
    let c = well_conditioned(rng, d, 20.0);
    let cinv = c.clone().try_inverse().expect("well-conditioned");
    let conj = ExponentMatrix::new(&c * e.matrix() * cinv)?;
    let dec2 = spectral_decompose(&conj, tol)?;
    let dist = |x: &[f64], y: &[f64]| {
        if x.len() != y.len() {
            return f64::INFINITY;
        }
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    };
    Ok(LawResiduals {
        group,
        inverse,
        block,
        conjugation: dist(&dec.a, &dec2.a),
        real_parts: dist(&dec.a, &entry.a),
        dblock_match: dec.dblock == dec2.dblock && dec.dblock == entry.dblock,
    })
}
