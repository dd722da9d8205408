use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Cosine { lr_max: f64, lr_min: f64 },
    Constant { lr: f64 },
}

impl LrSchedule {
    /// Learning rate at epoch `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> Result<f64, TrainError> {
        if t > total {
            return Err(TrainError::Domain(format!(
                "epoch {t} is past the schedule end {total}"
            )));
        }
        Ok(match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_max, lr_min } => {
                if total == 0 {
                    return Ok(lr_max);
                }
                lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos())
            }
        })
    }

    /// Rate at the start of training.
    pub fn initial(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_max, .. } => lr_max,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr >= 0.0 && lr.is_finite(),
            LrSchedule::Cosine { lr_max, lr_min } => {
                lr_min >= 0.0 && lr_max >= lr_min && lr_max.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "invalid learning rate schedule {self:?}"
            )))
        }
    }
}
