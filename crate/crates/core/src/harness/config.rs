use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetSpec, HarnessError};
use crate::bilevel::{apply_scheme, LrSchedule, OptimizerKind, TrainConfig};
use crate::search_space::SupernetSpec;

/// Env var that, when set, is prepended to every run's `output_dir`.
pub const OUTPUT_ROOT_VAR: &str = "MINIDARTS_OUT";

/// Optional per-field replacements applied on top of a preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_lr: Option<LrSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_lr: Option<LrSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_optimizer: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_optimizer: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// On-disk run description (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub overrides: TrainOverrides,
    pub supernet: SupernetSpec,
    pub dataset: DatasetSpec,
    pub output_dir: PathBuf,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "baseline".into(),
            overrides: TrainOverrides::default(),
            supernet: SupernetSpec::default(),
            dataset: DatasetSpec::default(),
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 1,
        }
    }
}

/// Fully resolved run, as recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub train: TrainConfig,
    pub supernet: SupernetSpec,
    pub dataset: DatasetSpec,
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Preset, then overrides, then the explicit `preset`/`seed` arguments.
    pub fn resolve(
        &self,
        preset: Option<&str>,
        seed: Option<u64>,
    ) -> Result<ResolvedRun, HarnessError> {
        let mut train = apply_scheme(preset.unwrap_or(&self.preset))?;
        let o = &self.overrides;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { train.$f = v; })* };
        }
        set!(
            total_epochs,
            warmup_epochs,
            weight_lr,
            param_lr,
            weight_optimizer,
            param_optimizer,
            weight_weight_decay,
            param_weight_decay,
            batch_size,
            seed
        );
        if let Some(s) = seed {
            train.seed = s;
        }
        train.validate()?;

        let mut supernet = self.supernet.clone();
        for name in &train.removed_ops {
            supernet.op_set = supernet.op_set.remove_operation(name)?;
        }
        supernet.validate()?;
        if supernet.input_dim != self.dataset.feature_dim() {
            return Err(HarnessError::Config(format!(
                "supernet input_dim {} does not match dataset feature dimension {}",
                supernet.input_dim,
                self.dataset.feature_dim()
            )));
        }
        if supernet.classes != self.dataset.classes {
            return Err(HarnessError::Config(format!(
                "supernet has {} classes, dataset has {}",
                supernet.classes, self.dataset.classes
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(ResolvedRun {
            train,
            supernet,
            dataset: self.dataset.clone(),
            checkpoint_every: self.checkpoint_every,
        })
    }

    /// `output_dir`, under `$MINIDARTS_OUT` when that is set.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
