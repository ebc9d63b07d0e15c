//! Embedding adapters trained once, on the first session, then frozen.
//!
//! These act on embeddings rather than inside a backbone: FiLM is a
//! per-feature scale and shift (`γ ⊙ x + β`, 2d parameters) standing in for
//! FiLM layers, and `Full` is an affine map (`M x + c`) standing in for
//! full-body fine-tuning. Each is trained jointly with a temporary linear
//! head that starts at zero and is thrown away afterwards.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::embeddings::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::heads::dense_labels;
use crate::linalg::{check_dim, dot, Vector};
use crate::train::{fit, JointObjective, TrainConfig};

pub const ADAPTER_MAGIC: [u8; 4] = *b"ADP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Identity,
    Film,
    Full,
}

impl AdapterKind {
    pub fn param_count(self, dim: usize) -> usize {
        match self {
            AdapterKind::Identity => 0,
            AdapterKind::Film => 2 * dim,
            AdapterKind::Full => dim * dim + dim,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            AdapterKind::Identity => 0,
            AdapterKind::Film => 1,
            AdapterKind::Full => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(AdapterKind::Identity),
            1 => Ok(AdapterKind::Film),
            2 => Ok(AdapterKind::Full),
            other => Err(Error::Corrupt(format!("unknown adapter kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterParams {
    Identity {
        dim: usize,
    },
    Film {
        gamma: Vec<f64>,
        beta: Vec<f64>,
    },
    /// `matrix` is row-major `dim × dim`.
    Full {
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
}

impl AdapterParams {
    pub fn identity(dim: usize) -> Self {
        AdapterParams::Identity { dim }
    }

    /// FiLM with `γ = 1`, `β = 0`.
    pub fn film_identity(dim: usize) -> Self {
        AdapterParams::Film {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub fn film(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        check_dim(gamma.len(), beta.len())?;
        check_finite(&gamma)?;
        check_finite(&beta)?;
        Ok(AdapterParams::Film { gamma, beta })
    }

    pub fn full(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        check_dim(offset.len() * offset.len(), matrix.len())?;
        check_finite(&matrix)?;
        check_finite(&offset)?;
        Ok(AdapterParams::Full { matrix, offset })
    }

    /// Initial parameters for `kind` (the identity map in every case).
    pub fn init(kind: AdapterKind, dim: usize) -> Self {
        let objective = JointObjective::new(kind, dim, 0);
        Self::from_flat(kind, dim, &objective.init_params())
    }

    fn from_flat(kind: AdapterKind, dim: usize, flat: &[f64]) -> Self {
        match kind {
            AdapterKind::Identity => AdapterParams::Identity { dim },
            AdapterKind::Film => AdapterParams::Film {
                gamma: flat[..dim].to_vec(),
                beta: flat[dim..2 * dim].to_vec(),
            },
            AdapterKind::Full => AdapterParams::Full {
                matrix: flat[..dim * dim].to_vec(),
                offset: flat[dim * dim..dim * dim + dim].to_vec(),
            },
        }
    }

    pub fn kind(&self) -> AdapterKind {
        match self {
            AdapterParams::Identity { .. } => AdapterKind::Identity,
            AdapterParams::Film { .. } => AdapterKind::Film,
            AdapterParams::Full { .. } => AdapterKind::Full,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AdapterParams::Identity { dim } => *dim,
            AdapterParams::Film { gamma, .. } => gamma.len(),
            AdapterParams::Full { offset, .. } => offset.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kind().param_count(self.dim())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        let out = match self {
            AdapterParams::Identity { .. } => x.to_vec(),
            AdapterParams::Film { gamma, beta } => x
                .iter()
                .zip(gamma.iter().zip(beta))
                .map(|(xi, (g, b))| g * xi + b)
                .collect(),
            AdapterParams::Full { matrix, offset } => {
                let d = offset.len();
                (0..d)
                    .map(|i| dot(&matrix[i * d..(i + 1) * d], x) + offset[i])
                    .collect()
            }
        };
        Vector::new(out)
    }

    /// Applies the adapter to every record, keeping labels.
    pub fn apply_records(&self, records: &[EmbeddingRecord]) -> Result<Vec<EmbeddingRecord>> {
        records
            .iter()
            .map(|r| {
                Ok(EmbeddingRecord {
                    label: r.label,
                    features: self.apply(&r.features)?,
                })
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&ADAPTER_MAGIC)?;
        codec::write_u8(&mut w, self.kind().to_byte())?;
        codec::write_u32(&mut w, self.dim() as u32)?;
        match self {
            AdapterParams::Identity { .. } => {}
            AdapterParams::Film { gamma, beta } => {
                codec::write_f64s(&mut w, gamma)?;
                codec::write_f64s(&mut w, beta)?;
            }
            AdapterParams::Full { matrix, offset } => {
                codec::write_f64s(&mut w, matrix)?;
                codec::write_f64s(&mut w, offset)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        codec::expect_magic(&mut r, ADAPTER_MAGIC)?;
        let kind = AdapterKind::from_byte(codec::read_u8(&mut r)?)?;
        let dim = codec::read_u32(&mut r)? as usize;
        let flat = codec::read_f64s(&mut r, kind.param_count(dim))?;
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt("non-finite adapter parameter".into()));
        }
        Ok(Self::from_flat(kind, dim, &flat))
    }
}

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

/// Adapter and the loss curve of the joint training that produced it.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub params: AdapterParams,
    pub losses: Vec<f64>,
}

/// Trains an adapter of `kind` jointly with a zero-initialized linear head on
/// first-session data and returns the adapter alone.
pub fn first_session_adapt(
    data: &[EmbeddingRecord],
    kind: AdapterKind,
    cfg: &TrainConfig,
) -> Result<Adaptation> {
    let (dim, class_ids, xs, ys) = dense_labels(data)?;
    if kind == AdapterKind::Identity {
        cfg.validate()?;
        return Ok(Adaptation {
            params: AdapterParams::identity(dim),
            losses: Vec::new(),
        });
    }
    let objective = JointObjective::new(kind, dim, class_ids.len());
    let fit = fit(&objective, &xs, &ys, cfg)?;
    let (adapter, _, _) = objective.split(&fit.params);
    Ok(Adaptation {
        params: AdapterParams::from_flat(kind, dim, adapter),
        losses: fit.losses,
    })
}
