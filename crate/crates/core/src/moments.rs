//! Running second-moment sums for the shared covariance of the LDA head.
//!
//! The state is the triple `(A, b, count)` with `A = Σ g gᵀ`, `b = Σ g`.
//! It carries no labels and no raw samples, so it can be checkpointed between
//! sessions and merged across shards.

use std::io::{Read, Write};

use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, outer_accumulate, Cholesky, SymMatrix, Vector};

pub const MOMENTS_MAGIC: [u8; 4] = *b"MOM1";

/// Default ridge added to the sample covariance (`S̃ = S + λI`).
pub const DEFAULT_REGULARIZER: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments {
    a: SymMatrix,
    b: Vec<f64>,
    count: u64,
}

impl RunningMoments {
    /// The all-zero state every run starts from.
    pub fn new(dim: usize) -> Self {
        Self {
            a: SymMatrix::zeros(dim),
            b: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> &[f64] {
        &self.b
    }

    pub fn scatter(&self) -> &SymMatrix {
        &self.a
    }

    /// Adds a batch of embeddings. The batch is validated up front, so on
    /// error the state is left untouched.
    pub fn inc_update<V: AsRef<[f64]>>(&mut self, batch: &[V]) -> Result<()> {
        for v in batch {
            let v = v.as_ref();
            check_dim(self.dim(), v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
        }
        for v in batch {
            let v = v.as_ref();
            outer_accumulate(&mut self.a, v)?;
            for (acc, x) in self.b.iter_mut().zip(v) {
                *acc += x;
            }
        }
        self.count += batch.len() as u64;
        Ok(())
    }

    /// Consuming form of [`inc_update`](Self::inc_update).
    pub fn updated<V: AsRef<[f64]>>(mut self, batch: &[V]) -> Result<Self> {
        self.inc_update(batch)?;
        Ok(self)
    }

    /// Componentwise sum with another shard.
    pub fn merge(&mut self, other: &RunningMoments) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        self.a.add_assign(&other.a)?;
        for (acc, x) in self.b.iter_mut().zip(&other.b) {
            *acc += x;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn merged(mut self, other: &RunningMoments) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    pub fn finalize(&self) -> Result<CovarianceEstimate> {
        self.finalize_with(DEFAULT_REGULARIZER)
    }

    /// `S = (A - b bᵀ / count) / (count - 1)`, `mean = b / count`,
    /// `S̃ = S + λI`.
    pub fn finalize_with(&self, regularizer: f64) -> Result<CovarianceEstimate> {
        if self.count < 2 {
            return Err(Error::InsufficientData { count: self.count });
        }
        if !(regularizer.is_finite() && regularizer > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularizer must be positive, got {regularizer}"
            )));
        }
        let n = self.count as f64;
        let b = &self.b;
        let mut s = self.a.clone();
        s.map_upper(|i, j, aij| (aij - b[i] * b[j] / n) / (n - 1.0));
        let mean = Vector::from_finite(b.iter().map(|x| x / n).collect());
        CovarianceEstimate::from_parts(s, mean, self.count, regularizer)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MOMENTS_MAGIC)?;
        codec::write_u32(&mut w, self.dim() as u32)?;
        codec::write_u64(&mut w, self.count)?;
        codec::write_f64s(&mut w, &self.b)?;
        codec::write_f64s(&mut w, &self.a.upper_triangle())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        codec::expect_magic(&mut r, MOMENTS_MAGIC)?;
        let dim = codec::read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(Error::Corrupt("moments with zero dimension".into()));
        }
        let count = codec::read_u64(&mut r)?;
        let b = codec::read_f64s(&mut r, dim)?;
        let upper = codec::read_f64s(&mut r, dim * (dim + 1) / 2)?;
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt("non-finite moment sum".into()));
        }
        let a = SymMatrix::from_upper_triangle(dim, &upper)
            .map_err(|_| Error::Corrupt("non-finite scatter entry".into()))?;
        if count == 0 && (b.iter().any(|&x| x != 0.0) || a.as_row_major().iter().any(|&x| x != 0.0))
        {
            return Err(Error::Corrupt("empty moments with non-zero sums".into()));
        }
        Ok(Self { a, b, count })
    }
}

/// Sample covariance finalized from running moments, with its ridge-regularized
/// counterpart and a cached Cholesky factor of the latter.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    s: SymMatrix,
    s_reg: SymMatrix,
    mean: Vector,
    n: u64,
    factor: Cholesky,
}

impl CovarianceEstimate {
    /// Assembles an estimate from an explicit covariance. `s` must be
    /// symmetric positive semidefinite so that `s + λI` factorizes.
    pub fn from_parts(s: SymMatrix, mean: Vector, n: u64, regularizer: f64) -> Result<Self> {
        check_dim(s.dim(), mean.dim())?;
        let s_reg = s.add_scaled_identity(regularizer);
        let factor = Cholesky::factor(&s_reg)?;
        Ok(Self {
            s,
            s_reg,
            mean,
            n,
            factor,
        })
    }

    /// Zero covariance, so `S̃ = I` and the LDA head degenerates to NCM.
    pub fn isotropic(dim: usize) -> Self {
        Self::from_parts(SymMatrix::zeros(dim), Vector::zeros(dim), 0, 1.0)
            .expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.s
    }

    pub fn regularized(&self) -> &SymMatrix {
        &self.s_reg
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn sample_count(&self) -> u64 {
        self.n
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    /// `S̃⁻¹ rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(rhs)
    }
}
