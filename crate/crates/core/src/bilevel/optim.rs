use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    AdaptiveMoment { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const SGD_09: Self = OptimizerKind::SgdMomentum { momentum: 0.9 };
    /// Betas used by the reference DARTS implementation for α.
    pub const ADAM_DARTS: Self = OptimizerKind::AdaptiveMoment {
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// One heavy-ball step on a scalar: `v ← μv + g + wd·θ`, `θ ← θ − lr·v`.
#[inline]
pub fn heavy_ball_update(
    theta: &mut f64,
    velocity: &mut f64,
    grad: f64,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    *velocity = momentum * *velocity + grad + weight_decay * *theta;
    *theta -= lr * *velocity;
}

/// Per-group optimizer with its buffers, serialisable for checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub second_moment: Vec<Vec<f64>>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(
        kind: OptimizerKind,
        weight_decay: f64,
        params: &[Tensor],
    ) -> Result<Self, TrainError> {
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight_decay must be >= 0, got {weight_decay}"
            )));
        }
        match kind {
            OptimizerKind::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(TrainError::Config(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
            OptimizerKind::AdaptiveMoment { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                return Err(TrainError::Config(
                    "invalid adaptive-moment hyperparameters".into(),
                ));
            }
            _ => {}
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Ok(Self {
            kind,
            weight_decay,
            second_moment: match kind {
                OptimizerKind::AdaptiveMoment { .. } => zeros.clone(),
                OptimizerKind::SgdMomentum { .. } => Vec::new(),
            },
            velocity: zeros,
            steps: 0,
        })
    }

    /// Checks that buffers line up with `params`.
    pub fn matches(&self, params: &[Tensor]) -> bool {
        let shapes_ok = |bufs: &[Vec<f64>]| {
            bufs.len() == params.len() && bufs.iter().zip(params).all(|(b, t)| b.len() == t.len())
        };
        shapes_ok(&self.velocity)
            && match self.kind {
                OptimizerKind::AdaptiveMoment { .. } => shapes_ok(&self.second_moment),
                OptimizerKind::SgdMomentum { .. } => true,
            }
    }

    /// Applies one update using the gradients stored on each tensor.
    pub fn step(&mut self, params: &mut [Tensor], lr: f64) -> Result<(), TrainError> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if !self.matches(params) {
            return Err(TrainError::State(
                "optimizer buffers do not match parameters".into(),
            ));
        }
        for t in params.iter() {
            let grad = t
                .grad()
                .ok_or_else(|| TrainError::State("parameter has no gradient".into()))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient);
            }
        }
        self.steps += 1;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for (t, v) in params.iter_mut().zip(&mut self.velocity) {
                    let grad = t.grad().expect("checked above").to_vec();
                    for ((theta, vi), g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                        heavy_ball_update(theta, vi, g, lr, momentum, wd);
                    }
                }
            }
            OptimizerKind::AdaptiveMoment { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powf(self.steps as f64);
                let bc2 = 1.0 - beta2.powf(self.steps as f64);
                for ((t, m), s) in params
                    .iter_mut()
                    .zip(&mut self.velocity)
                    .zip(&mut self.second_moment)
                {
                    let grad = t.grad().expect("checked above").to_vec();
                    for (((theta, mi), si), g) in t
                        .data_mut()
                        .iter_mut()
                        .zip(m.iter_mut())
                        .zip(s.iter_mut())
                        .zip(grad)
                    {
                        let g = g + wd * *theta;
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *si = beta2 * *si + (1.0 - beta2) * g * g;
                        let mhat = *mi / bc1;
                        let shat = *si / bc2;
                        *theta -= lr * mhat / (shat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
