//! Dataset dissimilarity: for each target embedding, the minimum cosine
//! distance to any reference embedding, reduced to one scalar.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot};

/// How per-target minima are reduced to the summary value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub per_target_min: Vec<f64>,
    pub summary: f64,
    pub reduction: Reduction,
    pub target_size: usize,
    pub reference_size: usize,
}

impl SimilarityReport {
    /// Linear-interpolated quantile of the per-target minima, `q ∈ [0, 1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        quantile(&self.per_target_min, q)
    }
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn normalized<V: AsRef<[f64]>>(set: &[V], dim: usize) -> Result<Vec<Vec<f64>>> {
    set.iter()
        .map(|v| {
            let v = v.as_ref();
            check_dim(dim, v.len())?;
            let norm = dot(v, v).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNorm);
            }
            Ok(v.iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Brute-force scan over all target/reference pairs.
pub fn min_cosine_distance<T, R>(
    target: &[T],
    reference: &[R],
    reduction: Reduction,
) -> Result<SimilarityReport>
where
    T: AsRef<[f64]> + Sync,
    R: AsRef<[f64]> + Sync,
{
    let dim = target
        .first()
        .ok_or_else(|| Error::InvalidSpec("empty target set".into()))?
        .as_ref()
        .len();
    if reference.is_empty() {
        return Err(Error::InvalidSpec("empty reference set".into()));
    }
    let target = normalized(target, dim)?;
    let reference = normalized(reference, dim)?;

    let per_target_min: Vec<f64> = target
        .par_iter()
        .map(|t| {
            let best = reference
                .iter()
                .map(|r| dot(t, r))
                .fold(f64::NEG_INFINITY, f64::max);
            (1.0 - best).clamp(0.0, 2.0)
        })
        .collect();

    let summary = match reduction {
        Reduction::Mean => per_target_min.iter().sum::<f64>() / per_target_min.len() as f64,
        Reduction::Median => quantile(&per_target_min, 0.5),
    };
    Ok(SimilarityReport {
        summary,
        reduction,
        target_size: target.len(),
        reference_size: reference.len(),
        per_target_min,
    })
}
