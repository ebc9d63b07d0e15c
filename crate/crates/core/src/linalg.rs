//! Dense kernels: vectors, symmetric matrices, Cholesky solves and cosine
//! distance. Everything is `f64`; inputs stored as `f32` are widened on load.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance applied when a matrix is built from external data.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::DimMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps values already known to be finite.
    pub(crate) fn from_finite(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        Self::new(data)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Dense symmetric `dim × dim` matrix stored row-major in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        Ok(m)
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries and
    /// asymmetry beyond [`SYMMETRY_TOL`].
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimMismatch {
                expected: dim * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let m = Self { dim, data };
        m.check_symmetric(SYMMETRY_TOL)?;
        Ok(m)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Rebuilds a matrix from its row-major upper triangle (diagonal included).
    pub fn from_upper_triangle(dim: usize, upper: &[f64]) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if upper.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                actual: upper.len(),
            });
        }
        if upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let mut m = Self::zeros(dim);
        let mut it = upper.iter();
        for i in 0..dim {
            for j in i..dim {
                let v = *it.next().expect("length checked");
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        Ok(m)
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * (self.dim + 1) / 2);
        for i in 0..self.dim {
            out.extend_from_slice(&self.data[i * self.dim + i..(i + 1) * self.dim]);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let gap = (self.get(i, j) - self.get(j, i)).abs();
                if gap > tol {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        Ok(())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), x)).collect())
    }

    /// Returns `self + lambda * I`.
    pub fn add_scaled_identity(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += lambda;
        }
        out
    }

    /// Entrywise `self += other`.
    pub fn add_assign(&mut self, other: &SymMatrix) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Applies `f(i, j, value)` to every upper-triangle entry and mirrors the
    /// result into the lower triangle.
    pub(crate) fn map_upper(&mut self, mut f: impl FnMut(usize, usize, f64) -> f64) {
        let d = self.dim;
        for i in 0..d {
            for j in i..d {
                let v = f(i, j, self.data[i * d + j]);
                self.data[i * d + j] = v;
                self.data[j * d + i] = v;
            }
        }
    }
}

/// `acc += v vᵀ`. Only the upper triangle is computed; the lower triangle is
/// a mirror, so the result is exactly symmetric.
pub fn outer_accumulate(acc: &mut SymMatrix, v: &[f64]) -> Result<()> {
    check_dim(acc.dim, v.len())?;
    let d = acc.dim;
    for i in 0..d {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for (j, &vj) in v.iter().enumerate().skip(i) {
            let add = vi * vj;
            acc.data[i * d + j] += add;
            if j != i {
                acc.data[j * d + i] += add;
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `m = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    min_pivot: f64,
}

impl Cholesky {
    /// Factorizes `m`, reading only its lower triangle.
    pub fn factor(m: &SymMatrix) -> Result<Self> {
        let d = m.dim;
        let mut lower = vec![0.0; d * d];
        let mut min_pivot = f64::INFINITY;
        for i in 0..d {
            for j in 0..=i {
                let mut s = m.data[i * d + j];
                for k in 0..j {
                    s -= lower[i * d + k] * lower[j * d + k];
                }
                if i == j {
                    if !(s.is_finite() && s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    min_pivot = min_pivot.min(s);
                    lower[i * d + i] = s.sqrt();
                } else {
                    lower[i * d + j] = s / lower[j * d + j];
                }
            }
        }
        Ok(Self {
            dim: d,
            lower,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest pivot `L_ii²` seen during factorization.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `L Lᵀ x = rhs` by forward then backward substitution.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, rhs.len())?;
        let d = self.dim;
        let l = &self.lower;
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = rhs[i];
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in (i + 1)..d {
                s -= l[k * d + i] * x[k];
            }
            x[i] = s / l[i * d + i];
        }
        Ok(x)
    }
}

/// Solves `m x = rhs` for symmetric positive definite `m` without forming
/// the inverse.
pub fn spd_solve(m: &SymMatrix, rhs: &Vector) -> Result<Vector> {
    let x = Cholesky::factor(m)?.solve(rhs)?;
    Vector::new(x)
}

/// `1 - u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(u.len(), v.len())?;
    let nu2 = dot(u, u);
    let nv2 = dot(v, v);
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // sqrt(a·a) is exact for a = u·u, so cosine_distance(u, u) is exactly 0.
    Ok((1.0 - dot(u, v) / (nu2 * nv2).sqrt()).clamp(0.0, 2.0))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, actual })
    }
}
