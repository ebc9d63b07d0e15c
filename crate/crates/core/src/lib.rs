//! Replay-free class-incremental learning over precomputed embeddings.
//!
//! A run keeps three pieces of state between sessions: [`RunningMoments`]
//! for the shared covariance, [`ClassStats`] for the class means, and the
//! [`AdapterParams`] fixed after the first session. Closed-form NCM/LDA heads
//! are rebuilt from them after every session, so streaming the sessions
//! gives exactly the head built offline on the pooled data.

mod codec;

pub mod adapter;
pub mod embeddings;
pub mod error;
pub mod harness;
pub mod heads;
pub mod linalg;
pub mod moments;
pub mod report;
pub mod schedule;
pub mod similarity;
pub mod synth;
pub mod train;

pub use adapter::{first_session_adapt, AdapterKind, AdapterParams};
pub use embeddings::{EmbeddingReader, EmbeddingRecord, EmbeddingWriter};
pub use error::{Error, Result};
pub use harness::{
    ppdr, run_cil, run_offline, CilRunner, Dataset, Method, RunConfig, RunResult, RunnerState,
};
pub use heads::{build_lda, build_ncm, train_linear, ClassStats, ClassifierHead, HeadKind};
pub use linalg::{cosine_distance, outer_accumulate, spd_solve, SymMatrix, Vector};
pub use moments::{CovarianceEstimate, RunningMoments};
pub use report::{RunFooter, RunRecord, SessionLine};
pub use schedule::{preset_schedule, Preset, Session, SessionSchedule, Shots};
pub use similarity::{min_cosine_distance, Reduction, SimilarityReport};
pub use synth::{generate_synthetic, SynthSpec};
pub use train::TrainConfig;
