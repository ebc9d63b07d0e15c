//! Gaussian class clusters with a shared, axis-aligned covariance.
//!
//! Values are rounded through `f32` so that writing an embedding file and
//! reading it back yields exactly the generated records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum CovarianceShape {
    /// Unit variance on every axis.
    Isotropic,
    /// The first half of the axes have standard deviation `aspect_ratio`,
    /// the rest unit.
    Anisotropic { aspect_ratio: f64 },
}

impl CovarianceShape {
    fn stds(self, dim: usize) -> Vec<f64> {
        match self {
            CovarianceShape::Isotropic => vec![1.0; dim],
            CovarianceShape::Anisotropic { aspect_ratio } => (0..dim)
                .map(|j| if j < dim / 2 { aspect_ratio } else { 1.0 })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "layout")]
pub enum MeanLayout {
    /// Class `k` sits at `±separation` on informative axis `k mod m`; the sign
    /// flips for the second wrap. Needs `classes ≤ 2m`.
    Axes { separation: f64 },
    /// Every informative coordinate of every mean drawn from `N(0, spread²)`.
    Gaussian { spread: f64 },
}

/// Multipliers applied after sampling, separately to the informative axes
/// and to the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub informative: f64,
    pub nuisance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub covariance: CovarianceShape,
    pub means: MeanLayout,
    /// Leading axes that carry class signal; the remaining means are zero.
    /// `None` means all axes.
    pub informative_dims: Option<usize>,
    pub scaling: Option<FeatureScaling>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            train_per_class: 200,
            test_per_class: 100,
            covariance: CovarianceShape::Isotropic,
            means: MeanLayout::Axes { separation: 8.0 },
            informative_dims: None,
            scaling: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Means spread over every axis, half of which are `aspect_ratio` times
    /// noisier: the case where a shared covariance pays off over NCM.
    pub fn anisotropic(aspect_ratio: f64, seed: u64) -> Self {
        Self {
            covariance: CovarianceShape::Anisotropic { aspect_ratio },
            means: MeanLayout::Gaussian { spread: 2.0 },
            seed,
            ..Self::default()
        }
    }

    /// Class signal confined to a few axes and shrunk far below the unit
    /// ridge, next to loud pure-noise axes. A per-feature rescale recovers
    /// the separation; the raw embeddings hide it.
    pub fn rescaled(seed: u64) -> Self {
        Self {
            classes: 40,
            dim: 32,
            train_per_class: 200,
            test_per_class: 100,
            covariance: CovarianceShape::Isotropic,
            means: MeanLayout::Gaussian { spread: 4.0 },
            informative_dims: Some(8),
            scaling: Some(FeatureScaling {
                informative: 0.15,
                nuisance: 10.0,
            }),
            seed,
        }
    }

    fn informative(&self) -> usize {
        self.informative_dims.unwrap_or(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be positive".into());
        }
        let m = self.informative();
        if m == 0 || m > self.dim {
            return bad(format!("informative_dims {m} not in 1..={}", self.dim));
        }
        if let CovarianceShape::Anisotropic { aspect_ratio } = self.covariance {
            if !(aspect_ratio.is_finite() && aspect_ratio > 0.0) {
                return bad(format!("aspect ratio {aspect_ratio} must be positive"));
            }
        }
        match self.means {
            MeanLayout::Axes { separation } => {
                if !separation.is_finite() {
                    return bad("separation must be finite".into());
                }
                if self.classes > 2 * m {
                    return bad(format!(
                        "axis layout places at most {} classes on {m} axes",
                        2 * m
                    ));
                }
            }
            MeanLayout::Gaussian { spread } => {
                if !(spread.is_finite() && spread >= 0.0) {
                    return bad("spread must be finite and non-negative".into());
                }
            }
        }
        if let Some(s) = self.scaling {
            if !(s.informative.is_finite() && s.nuisance.is_finite()) {
                return bad("scaling factors must be finite".into());
            }
        }
        Ok(())
    }

    /// Class means before scaling.
    pub fn class_means(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let m = self.informative();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.classes)
            .map(|k| {
                let mut mu = vec![0.0; self.dim];
                match self.means {
                    MeanLayout::Axes { separation } => {
                        let sign = if k < m { 1.0 } else { -1.0 };
                        mu[k % m] = sign * separation;
                    }
                    MeanLayout::Gaussian { spread } => {
                        for x in &mut mu[..m] {
                            let z: f64 = rng.sample(StandardNormal);
                            *x = spread * z;
                        }
                    }
                }
                mu
            })
            .collect())
    }
}

/// Draws `(train, test)`; records are grouped by class, labels `0..classes`.
pub fn generate_synthetic(
    spec: &SynthSpec,
) -> Result<(Vec<EmbeddingRecord>, Vec<EmbeddingRecord>)> {
    let means = spec.class_means()?;
    let stds = spec.covariance.stds(spec.dim);
    let m = spec.informative();
    let scale: Vec<f64> = (0..spec.dim)
        .map(|j| match spec.scaling {
            None => 1.0,
            Some(s) if j < m => s.informative,
            Some(s) => s.nuisance,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x0005_EED0_FC1A_55E5);
    let mut draw = |per_class: usize| -> Vec<EmbeddingRecord> {
        let mut out = Vec::with_capacity(per_class * spec.classes);
        for (k, mu) in means.iter().enumerate() {
            for _ in 0..per_class {
                let f: Vec<f64> = (0..spec.dim)
                    .map(|j| {
                        let z: f64 = rng.sample(StandardNormal);
                        ((mu[j] + stds[j] * z) * scale[j]) as f32 as f64
                    })
                    .collect();
                out.push(EmbeddingRecord {
                    label: k as u32,
                    features: Vector::from_finite(f),
                });
            }
        }
        out
    };
    let train = draw(spec.train_per_class);
    let test = draw(spec.test_per_class);
    Ok((train, test))
}
