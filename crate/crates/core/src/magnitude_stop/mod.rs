//! Operation magnitudes per epoch, stop criteria over them, and the two ways
//! of acting on a criterion: stopping a live run or rolling back a finished
//! one to a saved epoch.

mod criteria;
mod stop;
mod trace;

pub use criteria::{
    criterion_peak, criterion_rank_stable, criterion_residual_peak, criterion_skip_count,
    learnable_ranking, residual_score, EdgeRanking, StopCriterion,
};
pub use stop::{
    early_stop_run, selective_stop, CheckpointSource, EarlyStop, OnlineStopper, Selection,
    DEFAULT_PATIENCE,
};
pub use trace::{magnitude, MagnitudeTrace};

use thiserror::Error;

use crate::bilevel::TrainError;
use crate::search_space::SpaceError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StopError {
    #[error("{0}")]
    Domain(String),
    #[error("missing checkpoint for epoch {epoch}")]
    MissingCheckpoint { epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<SpaceError> for StopError {
    fn from(e: SpaceError) -> Self {
        StopError::Domain(e.to_string())
    }
}
