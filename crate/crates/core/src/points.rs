use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite cloud of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("point dimension must be >= 1".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        assert!(dim > 0);
        Self {
            dim,
            coords: Vec::with_capacity(dim * n),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Shape("empty point list".into()))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("points of mixed dimension".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        self.coords.extend_from_slice(p);
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Values of the 1-d projection `<u, x>` for every point.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.iter()
            .map(|p| p.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Applies `x -> f(x)` pointwise, writing into a new set of dimension `out_dim`.
    pub fn map(&self, out_dim: usize, f: impl Fn(&[f64], &mut [f64])) -> PointSet {
        let mut coords = vec![0.0; out_dim * self.len()];
        for (p, out) in self.iter().zip(coords.chunks_exact_mut(out_dim)) {
            f(p, out);
        }
        PointSet {
            dim: out_dim,
            coords,
        }
    }
}

pub fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}
