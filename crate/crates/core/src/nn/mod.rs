//! Minimal dense numeric core: f64 tensors, a reverse-mode tape, GRU and
//! attention layers, optimizers with constraint projection, and a
//! finite-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckWorst};
pub use layers::{
    attend, bigru_encode, decay_interval, modulate, AttentionParams, DenseHead, GruParams,
    DT_FLOOR_HOURS, DT_UNIT_SECONDS, INIT_SCALE,
};
pub(crate) use layers::bigru_states;
pub use optim::{Adam, Optimizer, Sgd};
pub use params::{Constraint, GradBuffer, Gradients, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;


use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid action code {0}")]
    InvalidAction(u8),
    #[error("time interval {0} is not positive")]
    InvalidInterval(f64),
    #[error("id {id} out of range for table of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
