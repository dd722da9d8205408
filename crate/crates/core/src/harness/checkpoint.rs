use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_file, HarnessError};
use crate::bilevel::{OptimizerState, RngState, SearchState};
use crate::search_space::{ArchParams, SupernetSpec, Weights};

pub const CHECKPOINT_VERSION: &str = "minidarts-checkpoint/1";

/// Everything needed to continue a search from the end of `epoch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub epoch: usize,
    pub weights: Vec<Vec<f64>>,
    pub arch: Vec<Vec<f64>>,
    pub weight_opt: OptimizerState,
    pub param_opt: OptimizerState,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn capture(state: &SearchState) -> Self {
        Self {
            version: CHECKPOINT_VERSION.into(),
            epoch: state.epoch,
            weights: state.weights.data(),
            arch: state.arch.rows(),
            weight_opt: state.weight_opt.clone(),
            param_opt: state.param_opt.clone(),
            rng: RngState::capture(&state.rng),
        }
    }

    pub fn arch_params(&self) -> Result<ArchParams, HarnessError> {
        Ok(ArchParams::from_rows(self.arch.clone())?)
    }

    pub fn into_state(self, spec: &SupernetSpec) -> Result<SearchState, HarnessError> {
        let arch = self.arch_params()?;
        Ok(SearchState {
            weights: Weights::from_data(spec, self.weights)?,
            arch,
            weight_opt: self.weight_opt,
            param_opt: self.param_opt,
            epoch: self.epoch,
            rng: self.rng.restore()?,
        })
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        #[derive(Deserialize)]
        struct Header {
            version: String,
        }
        let h: Header = serde_json::from_str(text)?;
        if h.version != CHECKPOINT_VERSION {
            return Err(HarnessError::Config(format!(
                "checkpoint version {:?} is not supported (expected {CHECKPOINT_VERSION:?})",
                h.version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&read_file(path)?)
    }
}
