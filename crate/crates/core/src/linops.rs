//! Linear-operator machinery: matrix exponentials, the operator powers
//! `t^E = exp(ln t * E)` and the decomposition of an exponent `E` into
//! invariant blocks grouped by the distinct real parts of its eigenvalues.
//!
//! The block decomposition never forms eigenvector matrices. Eigenvalues come
//! from the real Schur form; the invariant subspaces come from spectral
//! projectors built with the matrix sign function, which stays well behaved
//! for defective (Jordan) exponents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Default relative tolerance used to group eigenvalue real parts.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-7;

/// Slack allowed below the lower bound 1/2 on the real parts of an exponent.
pub const EXPONENT_REAL_PART_TOL: f64 = 1e-6;

// Pade [13/13] coefficients (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the degree-13 approximant is accurate to unit
// roundoff; larger inputs are scaled by 2^-s and squared back s times.
const PADE13_THETA: f64 = 5.371920351148152;

fn check_square(m: &Matrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a fixed degree-13 Pade
/// approximant.
pub fn mat_exp(m: &Matrix) -> Result<Matrix> {
    let n = check_square(m, "matrix")?;
    check_finite(m, "matrix")?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let norm = one_norm(m);
    let squarings = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);
    let id = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Numerical("singular Pade denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Largest singular value.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Block-diagonal matrix assembled from square blocks.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    out
}

/// Real d x d matrix usable as the exponent of an operator semistable law:
/// invertible, with every eigenvalue real part at least 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentMatrix(Matrix);

impl ExponentMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        let d = check_square(&m, "exponent")?;
        if d == 0 {
            return Err(Error::Shape("exponent must have dimension >= 1".into()));
        }
        check_finite(&m, "exponent")?;
        let sv = m.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 1e-12 * smax.max(1.0) {
            return Err(Error::Domain("exponent is singular".into()));
        }
        let scale = smax.max(1.0);
        for z in m.complex_eigenvalues().iter() {
            if z.re < 0.5 - EXPONENT_REAL_PART_TOL * scale {
                return Err(Error::Domain(format!(
                    "eigenvalue {} + {}i has real part below 1/2",
                    z.re, z.im
                )));
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// `t^E = exp(ln t * E)`.
pub fn t_power(e: &ExponentMatrix, t: f64) -> Result<Matrix> {
    t_power_raw(e.matrix(), t)
}

/// `t^M` for an arbitrary square matrix, e.g. a single spectral block.
pub fn t_power_raw(m: &Matrix, t: f64) -> Result<Matrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be positive and finite, got {t}")));
    }
    mat_exp(&(m * t.ln()))
}

/// Decomposition `E = Q * blockdiag(E_1, ..., E_p) * Q^-1` where every
/// eigenvalue of `E_j` has real part `a_j` and `a_1 < ... < a_p`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Distinct real parts, ascending.
    pub a: Vec<f64>,
    /// Block dimensions `d_j`.
    pub dblock: Vec<usize>,
    /// Change of basis; columns `[offset_j, offset_j + d_j)` span `V_j`.
    pub basis: Matrix,
    pub blocks: Vec<Matrix>,
}

impl SpectralDecomposition {
    pub fn p(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.dblock.iter().sum()
    }

    /// Block indices `alpha_j = 1 / a_j`, descending.
    pub fn alpha(&self) -> Vec<f64> {
        self.a.iter().map(|a| 1.0 / a).collect()
    }

    pub fn block_offsets(&self) -> Vec<usize> {
        self.dblock
            .iter()
            .scan(0, |acc, &k| {
                let off = *acc;
                *acc += k;
                Some(off)
            })
            .collect()
    }

    /// `Q * blockdiag(E_j) * Q^-1`.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let qinv = self
            .basis
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("basis is singular".into()))?;
        Ok(&self.basis * block_diag(&self.blocks) * qinv)
    }

    pub fn to_record(&self) -> DecompositionRecord {
        DecompositionRecord {
            p: self.p(),
            a: self.a.clone(),
            alpha: self.alpha(),
            dblock: self.dblock.clone(),
            basis: matrix_to_rows(&self.basis),
            blocks: self.blocks.iter().map(matrix_to_rows).collect(),
        }
    }
}

/// JSON form of a [`SpectralDecomposition`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecompositionRecord {
    pub p: usize,
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub dblock: Vec<usize>,
    pub basis: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<Vec<f64>>>,
}

/// Groups sorted values by single linkage with threshold `tau`.
///
/// Fails when a chain links values whose overall spread reaches `tau`, since
/// the grouping would then depend on the order of linking.
fn cluster_sorted(values: &[f64], tau: f64) -> Result<Vec<Vec<f64>>> {
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &v in values {
        match clusters.last_mut() {
            Some(c) if v - *c.last().unwrap() < tau => c.push(v),
            _ => clusters.push(vec![v]),
        }
    }
    for c in &clusters {
        let span = c.last().unwrap() - c.first().unwrap();
        if span >= tau {
            return Err(Error::Clustering(format!(
                "real parts {:?} chain within tolerance {tau:e} but span {span:e}",
                c
            )));
        }
    }
    Ok(clusters)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let mut x = a.clone();
    let mut scale = true;
    for _ in 0..100 {
        let inv = x
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("sign iteration hit a singular iterate".into()))?;
        let mu = if scale {
            let det = x.determinant().abs();
            if det > 0.0 && det.is_finite() {
                det.powf(-1.0 / n as f64)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&x * mu + inv / mu) * 0.5;
        let change = (&next - &x).norm();
        let size = next.norm();
        x = next;
        if change <= 1e-3 * size {
            scale = false;
        }
        if change <= 1e-14 * size {
            return Ok(x);
        }
    }
    Err(Error::Numerical(
        "matrix sign iteration did not converge; eigenvalue clusters too close".into(),
    ))
}

/// Orthonormal basis of the range of a projector of known rank, by
/// Gram-Schmidt with column pivoting and a second orthogonalisation pass.
fn projector_range(p: &Matrix, rank: usize) -> Result<Matrix> {
    let mut cols: Vec<_> = p.column_iter().map(|c| c.into_owned()).collect();
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(rank);
    let first = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for _ in 0..rank {
        let (k, best) = cols
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= 1e-6 * first {
            return Err(Error::Numerical(format!("spectral projector has rank below {rank}")));
        }
        let mut q = cols.swap_remove(k);
        for _ in 0..2 {
            for b in &basis {
                q -= b * b.dot(&q);
            }
        }
        let q = q.normalize();
        for c in cols.iter_mut() {
            for _ in 0..2 {
                *c -= &q * q.dot(c);
            }
        }
        basis.push(q);
    }
    let rest = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if rest > 1e-6 * first {
        return Err(Error::Numerical(format!(
            "spectral projector has rank above {rank} (residual column norm {rest:e})"
        )));
    }
    Ok(Matrix::from_columns(&basis))
}

/// Splits `E` into blocks by distinct eigenvalue real parts.
///
/// Real parts closer than `tol * max(1, max |Re|)` are grouped together.
/// Complex-conjugate pairs always share a real part and therefore a block,
/// so the basis stays real.
pub fn spectral_decompose(e: &ExponentMatrix, tol: f64) -> Result<SpectralDecomposition> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let m = e.matrix();
    let d = e.dim();
    let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    let scale = re.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let tau = tol * scale;
    let clusters = cluster_sorted(&re, tau)?;
    let dblock: Vec<usize> = clusters.iter().map(Vec::len).collect();

    let basis = if clusters.len() == 1 {
        Matrix::identity(d, d)
    } else {
        let id = Matrix::identity(d, d);
        // Projectors onto the spectrum left of each gap.
        let mut lower = Vec::with_capacity(clusters.len() + 1);
        lower.push(Matrix::zeros(d, d));
        for w in clusters.windows(2) {
            let shift = 0.5 * (w[0].last().unwrap() + w[1].first().unwrap());
            let sign = matrix_sign(&(m - &id * shift))?;
            lower.push((&id - sign) * 0.5);
        }
        lower.push(id.clone());
        let mut cols = Vec::with_capacity(d);
        for (j, &k) in dblock.iter().enumerate() {
            let band = &lower[j + 1] - &lower[j];
            let u = projector_range(&band, k)?;
            cols.extend(u.column_iter().map(|c| c.into_owned()));
        }
        Matrix::from_columns(&cols)
    };

    let qinv = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("invariant subspaces are not complementary".into()))?;
    let similar = &qinv * m * &basis;
    let mut blocks = Vec::with_capacity(dblock.len());
    let mut off = 0;
    for &k in &dblock {
        blocks.push(similar.view((off, off), (k, k)).into_owned());
        off += k;
    }
    let leak = (&similar - block_diag(&blocks)).norm();
    if leak > 1e-8 * m.norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "block decoupling residual {leak:e} too large; clusters nearly overlap"
        )));
    }

    // The block trace gives the cluster mean real part far more accurately
    // than the individual (possibly defective) eigenvalues do.
    let a: Vec<f64> = blocks
        .iter()
        .map(|b| b.trace() / b.nrows() as f64)
        .collect();
    if a.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Numerical("block real parts are not increasing".into()));
    }
    let alpha_max = 1.0 / a[0];
    if alpha_max > 2.0 + EXPONENT_REAL_PART_TOL * 4.0 * scale {
        return Err(Error::Domain(format!("alpha_1 = {alpha_max} exceeds 2")));
    }
    Ok(SpectralDecomposition {
        a,
        dblock,
        basis,
        blocks,
    })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn check_tgrid(tgrid: &[f64]) -> Result<()> {
    if tgrid.len() < 3 {
        return Err(Error::Fit(format!(
            "growth fit needs at least 3 times, got {}",
            tgrid.len()
        )));
    }
    if tgrid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Domain("tgrid entries must lie in (0, 1]".into()));
    }
    if tgrid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("tgrid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Norms `||t^{E_j}||` over the grid.
pub fn block_growth(dec: &SpectralDecomposition, j: usize, tgrid: &[f64]) -> Result<Vec<f64>> {
    let block = dec
        .blocks
        .get(j)
        .ok_or_else(|| Error::Domain(format!("block index {j} out of range")))?;
    tgrid
        .iter()
        .map(|&t| t_power_raw(block, t).map(|m| operator_norm(&m)))
        .collect()
}

/// Least-squares slope of `log ||t^{E_j}||` against `log t`. Tends to `a_j`
/// as the grid reaches further toward 0; Jordan structure in `E_j` adds a
/// logarithmic factor that only fades slowly.
pub fn growth_exponent_fit(dec: &SpectralDecomposition, j: usize, tgrid: &[f64]) -> Result<f64> {
    check_tgrid(tgrid)?;
    let norms = block_growth(dec, j, tgrid)?;
    let x: Vec<f64> = tgrid.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    Ok(least_squares_slope(&x, &y))
}

/// Smallest `K` with `K^-1 t^{a_j + eps} <= ||t^{E_j}|| <= K t^{a_j - eps}`
/// over the grid.
pub fn growth_sandwich_constant(
    dec: &SpectralDecomposition,
    j: usize,
    tgrid: &[f64],
    eps: f64,
) -> Result<f64> {
    check_tgrid(tgrid)?;
    let a = dec.a[j];
    let norms = block_growth(dec, j, tgrid)?;
    let k = tgrid
        .iter()
        .zip(&norms)
        .map(|(&t, &nrm)| {
            let upper = nrm / t.powf(a - eps);
            let lower = t.powf(a + eps) / nrm;
            upper.max(lower)
        })
        .fold(0.0, f64::max);
    Ok(k)
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Parses a row-major CSV matrix (comma separated, one row per line).
pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad matrix entry {f:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    matrix_from_rows(&rows)
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = mat_exp(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(r, Matrix::identity(3, 3));
    }

    #[test]
    fn exp_of_diagonal() {
        let r = mat_exp(&m(&[&[1.0, 0.0], &[0.0, 2.0]])).unwrap();
        assert_relative_eq!(r[(0, 0)], E, max_relative = 1e-13);
        assert_relative_eq!(r[(1, 1)], E * E, max_relative = 1e-13);
        assert_eq!(r[(0, 1)], 0.0);
    }

    #[test]
    fn exp_of_nilpotent_terminates() {
        let r = mat_exp(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert!(rel_err(&r, &m(&[&[1.0, 1.0], &[0.0, 1.0]])) < 1e-14);
    }

    #[test]
    fn exp_of_large_rotation_uses_squaring() {
        // exp(theta * J) is the rotation by theta.
        let theta = 40.0f64;
        let r = mat_exp(&m(&[&[0.0, -theta], &[theta, 0.0]])).unwrap();
        let want = m(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]]);
        assert!(rel_err(&r, &want) < 1e-10);
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(matches!(mat_exp(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn t_power_examples() {
        let e = ExponentMatrix::diagonal(&[0.5, 0.8]).unwrap();
        assert!(rel_err(&t_power(&e, 1.0).unwrap(), &Matrix::identity(2, 2)) < 1e-15);
        let r = t_power(&e, 4.0).unwrap();
        assert_relative_eq!(r[(0, 0)], 2.0, max_relative = 1e-13);
        assert_relative_eq!(r[(1, 1)], 3.0314331330207964, max_relative = 1e-13);

        // Jordan block closed form: t^a [[1, ln t], [0, 1]].
        let a = 0.7;
        let j = ExponentMatrix::new(m(&[&[a, 1.0], &[0.0, a]])).unwrap();
        let t: f64 = 0.5;
        let want = m(&[&[1.0, t.ln()], &[0.0, 1.0]]) * t.powf(a);
        assert!(rel_err(&t_power(&j, t).unwrap(), &want) < 1e-13);
    }

    #[test]
    fn t_power_rejects_nonpositive() {
        let e = ExponentMatrix::diagonal(&[0.5]).unwrap();
        assert!(matches!(t_power(&e, 0.0), Err(Error::Domain(_))));
        assert!(matches!(t_power(&e, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn exponent_validation() {
        assert!(ExponentMatrix::diagonal(&[0.4, 1.0]).is_err());
        assert!(ExponentMatrix::new(Matrix::zeros(2, 3)).is_err());
        assert!(ExponentMatrix::new(m(&[&[0.5, 0.0], &[0.0, 0.0]])).is_err());
        assert!(ExponentMatrix::diagonal(&[0.5, 2.0]).is_ok());
    }

    #[test]
    fn operator_norm_examples() {
        assert_relative_eq!(operator_norm(&Matrix::identity(3, 3)), 1.0, max_relative = 1e-12);
        assert_relative_eq!(operator_norm(&m(&[&[2.0, 0.0], &[0.0, -5.0]])), 5.0, max_relative = 1e-12);
        assert_relative_eq!(operator_norm(&m(&[&[0.0, 3.0], &[0.0, 0.0]])), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn decompose_scalar_multiple() {
        let dec = spectral_decompose(&ExponentMatrix::diagonal(&[0.5, 0.5]).unwrap(), 1e-7).unwrap();
        assert_eq!(dec.dblock, vec![2]);
        assert_relative_eq!(dec.a[0], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn decompose_distinct_diagonal() {
        let e = ExponentMatrix::diagonal(&[1.0 / 0.9, 1.0 / 1.8]).unwrap();
        let dec = spectral_decompose(&e, 1e-7).unwrap();
        assert_eq!(dec.dblock, vec![1, 1]);
        assert_relative_eq!(dec.a[0], 1.0 / 1.8, max_relative = 1e-12);
        assert_relative_eq!(dec.a[1], 1.0 / 0.9, max_relative = 1e-12);
        let alpha = dec.alpha();
        assert_relative_eq!(alpha[0], 1.8, max_relative = 1e-12);
        assert!(rel_err(&dec.reconstruct().unwrap(), e.matrix()) < 1e-12);
    }

    #[test]
    fn decompose_complex_pair() {
        // Characteristic polynomial (x - 0.7)^2 + 1: roots 0.7 +- i.
        let e = ExponentMatrix::new(m(&[&[0.7, -1.0], &[1.0, 0.7]])).unwrap();
        let dec = spectral_decompose(&e, 1e-7).unwrap();
        assert_eq!(dec.dblock, vec![2]);
        assert_relative_eq!(dec.a[0], 0.7, max_relative = 1e-13);
    }

    #[test]
    fn decompose_mixed_blocks_reconstructs() {
        let e = m(&[
            &[0.6, 1.0, 0.0, 0.0],
            &[0.0, 0.6, 0.0, 0.0],
            &[0.0, 0.0, 1.2, -2.0],
            &[0.0, 0.0, 2.0, 1.2],
        ]);
        let b = m(&[
            &[1.0, 0.2, -0.1, 0.3],
            &[0.1, 1.0, 0.4, 0.0],
            &[-0.3, 0.2, 1.0, 0.1],
            &[0.0, -0.2, 0.3, 1.0],
        ]);
        let conj = &b * e * b.clone().try_inverse().unwrap();
        let x = ExponentMatrix::new(conj.clone()).unwrap();
        let dec = spectral_decompose(&x, 1e-7).unwrap();
        assert_eq!(dec.dblock, vec![2, 2]);
        assert_relative_eq!(dec.a[0], 0.6, max_relative = 1e-10);
        assert_relative_eq!(dec.a[1], 1.2, max_relative = 1e-10);
        assert!(rel_err(&dec.reconstruct().unwrap(), &conj) < 1e-11);
        for (blk, &a) in dec.blocks.iter().zip(&dec.a) {
            for z in blk.complex_eigenvalues().iter() {
                assert!((z.re - a).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_transitive_chain_is_rejected() {
        let tol = 1e-3;
        let e = ExponentMatrix::diagonal(&[0.8, 0.8 + 0.0006, 0.8 + 0.0012]).unwrap();
        assert!(matches!(spectral_decompose(&e, tol), Err(Error::Clustering(_))));
        // A wider tolerance collapses the chain into one block.
        assert_eq!(spectral_decompose(&e, 1e-2).unwrap().dblock, vec![3]);
    }

    #[test]
    fn growth_fit_examples() {
        let tgrid: Vec<f64> = (0..=32).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect();

        let dec = spectral_decompose(&ExponentMatrix::diagonal(&[0.5]).unwrap(), 1e-7).unwrap();
        assert_relative_eq!(growth_exponent_fit(&dec, 0, &tgrid).unwrap(), 0.5, epsilon = 1e-12);

        let rot = ExponentMatrix::new(m(&[&[0.7, -1.0], &[1.0, 0.7]])).unwrap();
        let dec = spectral_decompose(&rot, 1e-7).unwrap();
        assert!((growth_exponent_fit(&dec, 0, &tgrid).unwrap() - 0.7).abs() < 1e-6);

        // Jordan block: ||t^E|| = t^0.7 * (|ln t| + sqrt(ln^2 t + 4)) / 2. The
        // closed form evaluated independently on this grid gives 0.56372216...
        let jordan = ExponentMatrix::new(m(&[&[0.7, 1.0], &[0.0, 0.7]])).unwrap();
        let dec = spectral_decompose(&jordan, 1e-7).unwrap();
        let slope = growth_exponent_fit(&dec, 0, &tgrid).unwrap();
        assert!((slope - 0.5637221616067927).abs() < 1e-8, "slope {slope}");

        // Pushing the grid toward 0 shrinks the logarithmic gap.
        let deep: Vec<f64> = (400..=800).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect();
        let slope = growth_exponent_fit(&dec, 0, &deep).unwrap();
        assert!(slope > 0.69 && slope < 0.7, "slope {slope}");
    }

    #[test]
    fn growth_fit_needs_three_points() {
        let dec = spectral_decompose(&ExponentMatrix::diagonal(&[0.5]).unwrap(), 1e-7).unwrap();
        assert!(matches!(growth_exponent_fit(&dec, 0, &[1.0, 0.1]), Err(Error::Fit(_))));
    }

    #[test]
    fn sandwich_constant_is_bounded() {
        let jordan = ExponentMatrix::new(m(&[&[0.7, 1.0], &[0.0, 0.7]])).unwrap();
        let dec = spectral_decompose(&jordan, 1e-7).unwrap();
        let short: Vec<f64> = (0..=32).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect();
        let long: Vec<f64> = (0..=128).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect();
        let k1 = growth_sandwich_constant(&dec, 0, &short, 0.05).unwrap();
        let k2 = growth_sandwich_constant(&dec, 0, &long, 0.05).unwrap();
        assert!(k1.is_finite() && k2.is_finite());
        // The log factor peaks and is then dominated by t^-eps.
        assert!(k2 < 10.0 * k1, "{k1} {k2}");
    }

    #[test]
    fn csv_round_trip() {
        let a = m(&[&[0.5, -1.25], &[3.0, 1e-17]]);
        let back = matrix_from_csv(&matrix_to_csv(&a)).unwrap();
        assert_eq!(a, back);
    }
}
