//! Alternating first-order optimization of supernet weights ω (training
//! split) and architecture parameters α (validation split).

mod config;
mod optim;
mod schedule;
mod trainer;

pub use config::{apply_scheme, TrainConfig, PRESETS};
pub use optim::{heavy_ball_update, OptimizerKind, OptimizerState};
pub use schedule::LrSchedule;
pub use trainer::{BatchStats, BilevelTrainer, EpochMetrics, RngState, SearchState};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::search_space::SpaceError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("trainer state error: {0}")]
    State(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite loss or parameters at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Space(SpaceError::Autodiff(e))
    }
}
