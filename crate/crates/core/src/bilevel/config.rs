use serde::{Deserialize, Serialize};

use super::{LrSchedule, OptimizerKind, TrainError};
use crate::search_space::SKIP_CONNECT;

/// Hyperparameters of one bilevel search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme_name: String,
    pub total_epochs: usize,
    /// Leading epochs during which α is frozen and only ω trains.
    pub warmup_epochs: usize,
    pub weight_lr: LrSchedule,
    pub param_lr: LrSchedule,
    pub weight_optimizer: OptimizerKind,
    pub param_optimizer: OptimizerKind,
    pub weight_weight_decay: f64,
    /// L2 strength applied uniformly to every α entry.
    pub param_weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Operations dropped from the candidate set before the run.
    #[serde(default)]
    pub removed_ops: Vec<String>,
}

pub const PRESETS: [&str; 13] = [
    "baseline",
    "warmup_10",
    "warmup_20",
    "warmup_30",
    "l2_0.005",
    "l2_0.01",
    "freeze100",
    "lr_0.001",
    "lr_0.002",
    "lr_0.003",
    "ex_darts",
    "longrun",
    "no_skip",
];

const WEIGHT_LR: f64 = 0.025;
const WEIGHT_LR_MIN: f64 = 0.001;
const PARAM_LR: f64 = 0.0003;

impl TrainConfig {
    /// NAS-Bench-201 DARTS defaults: ω cosine-annealed from 0.025, α held at
    /// 0.0003 with L2 0.001, 50 epochs.
    pub fn baseline() -> Self {
        Self {
            scheme_name: "baseline".into(),
            total_epochs: 50,
            warmup_epochs: 0,
            weight_lr: LrSchedule::Cosine {
                lr_max: WEIGHT_LR,
                lr_min: WEIGHT_LR_MIN,
            },
            param_lr: LrSchedule::Constant { lr: PARAM_LR },
            weight_optimizer: OptimizerKind::SGD_09,
            param_optimizer: OptimizerKind::SGD_09,
            weight_weight_decay: 0.0005,
            param_weight_decay: 0.001,
            batch_size: 64,
            seed: 0,
            removed_ops: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_epochs == 0 {
            return Err(TrainError::Config("total_epochs must be >= 1".into()));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(TrainError::Config(format!(
                "warmup_epochs ({}) must be < total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        for wd in [self.weight_weight_decay, self.param_weight_decay] {
            if !(wd >= 0.0 && wd.is_finite()) {
                return Err(TrainError::Config(format!(
                    "weight decay must be >= 0, got {wd}"
                )));
            }
        }
        self.weight_lr.validate()?;
        self.param_lr.validate()
    }
}

/// Resolves a preset label to its full hyperparameter set.
pub fn apply_scheme(name: &str) -> Result<TrainConfig, TrainError> {
    let mut c = TrainConfig::baseline();
    match name {
        "baseline" => {}
        "warmup_10" => c.warmup_epochs = 10,
        "warmup_20" => c.warmup_epochs = 20,
        "warmup_30" => c.warmup_epochs = 30,
        "l2_0.005" => c.param_weight_decay = 0.005,
        "l2_0.01" => c.param_weight_decay = 0.01,
        "freeze100" => {
            c.warmup_epochs = 100;
            c.total_epochs = 150;
        }
        "lr_0.001" => c.param_lr = LrSchedule::Constant { lr: 0.001 },
        "lr_0.002" => c.param_lr = LrSchedule::Constant { lr: 0.002 },
        "lr_0.003" => c.param_lr = LrSchedule::Constant { lr: 0.003 },
        "ex_darts" => std::mem::swap(&mut c.weight_lr, &mut c.param_lr),
        "longrun" => {
            c.weight_lr = LrSchedule::Constant { lr: PARAM_LR };
            c.param_lr = LrSchedule::Constant { lr: 0.001 };
            c.total_epochs = 500;
        }
        "no_skip" => c.removed_ops = vec![SKIP_CONNECT.to_string()],
        other => {
            return Err(TrainError::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    }
    c.scheme_name = name.to_string();
    Ok(c)
}
