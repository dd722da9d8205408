//! Run configuration, synthetic data, checkpoints and on-disk outputs.

mod checkpoint;
mod config;
mod dataset;
mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ResolvedRun, RunConfig, TrainOverrides, OUTPUT_ROOT_VAR};
pub use dataset::{generate_dataset, Dataset, DatasetSpec, Generator, SplitDataset};
pub use run::{
    derive, read_metrics, read_trace, resume_search, run_search, run_seeds, Derived,
    DirCheckpoints, EarlyStopRecord, Manifest, RunPaths, SearchOptions, SearchOutcome, SeedResult,
    CODE_VERSION,
};

use std::path::Path;

use thiserror::Error;

use crate::bilevel::TrainError;
use crate::magnitude_stop::StopError;
use crate::search_space::SpaceError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss or parameters at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("missing checkpoint for epoch {epoch}")]
    MissingCheckpoint { epoch: usize },
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Stop(StopError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::NonFinite { .. } => 3,
            HarnessError::MissingCheckpoint { .. } => 4,
            _ => 1,
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => HarnessError::Config(m),
            TrainError::NonFinite { epoch } => HarnessError::NonFinite { epoch },
            TrainError::Space(s) => s.into(),
            other => HarnessError::Train(other),
        }
    }
}

impl From<SpaceError> for HarnessError {
    fn from(e: SpaceError) -> Self {
        match e {
            SpaceError::Domain(m) => HarnessError::Config(m),
            other => HarnessError::Train(TrainError::Space(other)),
        }
    }
}

impl From<StopError> for HarnessError {
    fn from(e: StopError) -> Self {
        match e {
            StopError::MissingCheckpoint { epoch } => HarnessError::MissingCheckpoint { epoch },
            StopError::Domain(m) => HarnessError::Config(m),
            StopError::Train(t) => t.into(),
            other => HarnessError::Stop(other),
        }
    }
}

fn io_err(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.as_ref().display().to_string();
    move |source| HarnessError::Io { path, source }
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}
