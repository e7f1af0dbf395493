//! Point-wise query ranker: three feature fields, a modified Attention-GRU
//! behavior encoder, a dense head with a 2-way softmax, training and
//! evaluation.

mod features;
pub mod metrics;
mod model;
mod train;

pub use features::{
    context_fixed, hour_bucket, labels, meta_feature_vector, prepare_instances, recent_items,
    ModelDims, PreparedInstance, ScoringInput, HOUR_BUCKETS,
};
pub use metrics::{auc, f1, EvalReport};
pub use model::{BehaviorTrace, RankerConfig, RankingModel, UserState, Variant};
pub use train::{
    batch_gradients, batch_gradients_sequential, batch_loss, check_gradients, evaluate, predict, train,
    OptimizerKind, TrainConfig, TrainReport,
};

use crate::nn::NnError;

/// Top-n returned by [`RankingModel::rank_candidates`] in the service.
pub const DEFAULT_TOP_N: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("test set contains a single class; AUC is undefined")]
    SingleClassTestSet,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("epsilon {0} > 0 after projection")]
    ProjectionViolated(f64),
    #[error("history event at {event} is not before decision time {decision}")]
    TimestampAfterDecision { event: i64, decision: i64 },
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = RankerError> = std::result::Result<T, E>;
