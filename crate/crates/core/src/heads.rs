//! Linear classifier heads over embeddings: `score_k(x) = w_kᵀx + b_k`.
//!
//! NCM and LDA heads are closed-form functions of per-class sums (and, for
//! LDA, the shared covariance), so they can be rebuilt exactly after every
//! session. The linear head is trained by softmax cross-entropy.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::adapter::AdapterKind;
use crate::codec;
use crate::embeddings::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, Vector};
use crate::moments::CovarianceEstimate;
use crate::train::{fit, Fit, JointObjective, TrainConfig};

pub const HEAD_MAGIC: [u8; 4] = *b"HED1";
pub const CLASS_STATS_MAGIC: [u8; 4] = *b"CLS1";

#[derive(Debug, Clone, PartialEq)]
struct ClassSum {
    sum: Vec<f64>,
    count: u64,
}

/// Per-class running sums and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    dim: usize,
    classes: BTreeMap<u32, ClassSum>,
    total: u64,
}

impl ClassStats {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            classes: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn count(&self, class: u32) -> Option<u64> {
        self.classes.get(&class).map(|c| c.count)
    }

    pub fn sum(&self, class: u32) -> Option<&[f64]> {
        self.classes.get(&class).map(|c| c.sum.as_slice())
    }

    pub fn mean(&self, class: u32) -> Option<Vector> {
        let c = self.classes.get(&class)?;
        (c.count > 0).then(|| class_mean(c))
    }

    /// Adds a batch of records; validated up front so a failed call changes
    /// nothing.
    pub fn update(&mut self, batch: &[EmbeddingRecord]) -> Result<()> {
        for r in batch {
            check_dim(self.dim, r.dim())?;
        }
        for r in batch {
            self.add(r.label, &r.features);
        }
        Ok(())
    }

    /// Adds one labeled embedding.
    pub fn insert(&mut self, label: u32, features: &[f64]) -> Result<()> {
        check_dim(self.dim, features.len())?;
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        self.add(label, features);
        Ok(())
    }

    fn add(&mut self, label: u32, features: &[f64]) {
        let entry = self.classes.entry(label).or_insert_with(|| ClassSum {
            sum: vec![0.0; self.dim],
            count: 0,
        });
        for (s, x) in entry.sum.iter_mut().zip(features) {
            *s += x;
        }
        entry.count += 1;
        self.total += 1;
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&CLASS_STATS_MAGIC)?;
        codec::write_u32(&mut w, self.dim as u32)?;
        codec::write_u32(&mut w, self.classes.len() as u32)?;
        for (&id, c) in &self.classes {
            codec::write_u32(&mut w, id)?;
            codec::write_u64(&mut w, c.count)?;
            codec::write_f64s(&mut w, &c.sum)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        codec::expect_magic(&mut r, CLASS_STATS_MAGIC)?;
        let dim = codec::read_u32(&mut r)? as usize;
        let k = codec::read_u32(&mut r)?;
        let mut stats = Self::new(dim);
        for _ in 0..k {
            let id = codec::read_u32(&mut r)?;
            let count = codec::read_u64(&mut r)?;
            let sum = codec::read_f64s(&mut r, dim)?;
            if count == 0 || sum.iter().any(|x| !x.is_finite()) {
                return Err(Error::Corrupt(format!("class {id} has invalid sums")));
            }
            if stats.classes.insert(id, ClassSum { sum, count }).is_some() {
                return Err(Error::Corrupt(format!("class {id} listed twice")));
            }
            stats.total += count;
        }
        Ok(stats)
    }
}

fn class_mean(c: &ClassSum) -> Vector {
    let n = c.count as f64;
    Vector::from_finite(c.sum.iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Ncm,
    Lda,
    Linear,
}

impl HeadKind {
    fn to_byte(self) -> u8 {
        match self {
            HeadKind::Ncm => 0,
            HeadKind::Lda => 1,
            HeadKind::Linear => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(HeadKind::Ncm),
            1 => Ok(HeadKind::Lda),
            2 => Ok(HeadKind::Linear),
            other => Err(Error::Corrupt(format!("unknown head kind {other}"))),
        }
    }
}

/// Weights `w_k` (one contiguous column per class) and biases `b_k`, with
/// classes in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    kind: HeadKind,
    dim: usize,
    class_ids: Vec<u32>,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl ClassifierHead {
    pub fn from_parts(
        kind: HeadKind,
        dim: usize,
        class_ids: Vec<u32>,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let k = class_ids.len();
        check_dim(k * dim, weights.len())?;
        check_dim(k, biases.len())?;
        if !class_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Corrupt(
                "class ids must be strictly ascending".into(),
            ));
        }
        if weights.iter().chain(&biases).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            kind,
            dim,
            class_ids,
            weights,
            biases,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Weight vector of the `k`-th class in id order.
    pub fn weight(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((0..self.num_classes())
            .map(|k| dot(self.weight(k), x) + self.biases[k])
            .collect())
    }

    /// Arg-max class id; ties go to the smallest id.
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (k, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = k;
            }
        }
        self.class_ids
            .get(best)
            .copied()
            .ok_or_else(|| Error::Corrupt("head has no classes".into()))
    }

    /// Predictions for many inputs, computed in parallel, in input order.
    pub fn predict_many<V: AsRef<[f64]> + Sync>(&self, xs: &[V]) -> Result<Vec<u32>> {
        xs.par_iter().map(|x| self.predict(x.as_ref())).collect()
    }

    /// Top-1 accuracy in percent.
    pub fn accuracy(&self, records: &[EmbeddingRecord]) -> Result<f64> {
        if records.is_empty() {
            return Ok(0.0);
        }
        let correct: usize = records
            .par_iter()
            .map(|r| self.predict(&r.features).map(|p| usize::from(p == r.label)))
            .sum::<Result<usize>>()?;
        Ok(100.0 * correct as f64 / records.len() as f64)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&HEAD_MAGIC)?;
        codec::write_u8(&mut w, self.kind.to_byte())?;
        codec::write_u32(&mut w, self.num_classes() as u32)?;
        codec::write_u32(&mut w, self.dim as u32)?;
        for &id in &self.class_ids {
            codec::write_u32(&mut w, id)?;
        }
        codec::write_f64s(&mut w, &self.weights)?;
        codec::write_f64s(&mut w, &self.biases)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        codec::expect_magic(&mut r, HEAD_MAGIC)?;
        let kind = HeadKind::from_byte(codec::read_u8(&mut r)?)?;
        let k = codec::read_u32(&mut r)? as usize;
        let dim = codec::read_u32(&mut r)? as usize;
        let class_ids = (0..k)
            .map(|_| codec::read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let weights = codec::read_f64s(&mut r, k * dim)?;
        let biases = codec::read_f64s(&mut r, k)?;
        Self::from_parts(kind, dim, class_ids, weights, biases)
    }
}

/// `ln(n_k / N)`.
fn log_prior(count: u64, total: u64) -> f64 {
    (count as f64 / total as f64).ln()
}

fn closed_form(
    kind: HeadKind,
    stats: &ClassStats,
    mut solve: impl FnMut(&Vector) -> Result<Vec<f64>>,
) -> Result<ClassifierHead> {
    let k = stats.num_classes();
    let mut class_ids = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k * stats.dim);
    let mut biases = Vec::with_capacity(k);
    for (&id, c) in &stats.classes {
        if c.count == 0 {
            return Err(Error::EmptyClass { class: id });
        }
        let mean = class_mean(c);
        let w = solve(&mean)?;
        biases.push(log_prior(c.count, stats.total) - 0.5 * dot(&mean, &w));
        weights.extend_from_slice(&w);
        class_ids.push(id);
    }
    ClassifierHead::from_parts(kind, stats.dim, class_ids, weights, biases)
}

/// Nearest-class-mean head: `w_k = μ_k`, `b_k = ln(n_k/N) - ½ μ_kᵀμ_k`.
pub fn build_ncm(stats: &ClassStats) -> Result<ClassifierHead> {
    closed_form(HeadKind::Ncm, stats, |mean| Ok(mean.as_slice().to_vec()))
}

/// LDA head with shared covariance: `w_k = S̃⁻¹μ_k`,
/// `b_k = ln(n_k/N) - ½ μ_kᵀS̃⁻¹μ_k`.
pub fn build_lda(stats: &ClassStats, cov: &CovarianceEstimate) -> Result<ClassifierHead> {
    check_dim(stats.dim, cov.dim())?;
    closed_form(HeadKind::Lda, stats, |mean| cov.solve(mean))
}

/// Linear head and its training curve.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub head: ClassifierHead,
    pub losses: Vec<f64>,
}

/// Trains a linear head from zero initialization by softmax cross-entropy.
pub fn train_linear(data: &[EmbeddingRecord], cfg: &TrainConfig) -> Result<LinearFit> {
    let (dim, class_ids, xs, ys) = dense_labels(data)?;
    let objective = JointObjective::new(AdapterKind::Identity, dim, class_ids.len());
    let Fit { params, losses } = fit(&objective, &xs, &ys, cfg)?;
    let (_, w, b) = objective.split(&params);
    let head =
        ClassifierHead::from_parts(HeadKind::Linear, dim, class_ids, w.to_vec(), b.to_vec())?;
    Ok(LinearFit { head, losses })
}

/// `(dim, class ids, features, dense labels)`.
pub(crate) type DenseLabels<'a> = (usize, Vec<u32>, Vec<&'a [f64]>, Vec<usize>);

/// Maps sparse class ids onto `0..K` in ascending id order.
pub(crate) fn dense_labels(data: &[EmbeddingRecord]) -> Result<DenseLabels<'_>> {
    let dim = data.first().ok_or(Error::SingleClass)?.dim();
    let mut ids: Vec<u32> = data.iter().map(|r| r.label).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::SingleClass);
    }
    let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut xs = Vec::with_capacity(data.len());
    let mut ys = Vec::with_capacity(data.len());
    for r in data {
        check_dim(dim, r.dim())?;
        xs.push(r.features.as_slice());
        ys.push(index[&r.label]);
    }
    Ok((dim, ids, xs, ys))
}
