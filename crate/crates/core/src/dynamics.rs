//! Two-phase simulation of a softmax head driven by a constant loss gradient
//! that flips sign halfway, and the time it takes the input to recover.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softmax, softmax_jacobian, AutodiffError};
use crate::bilevel::heavy_ball_update;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("config error: {0}")]
    Config(String),
    #[error("trajectory became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("restoration rule {rule:?} not met within {steps} steps")]
    NotRestored { rule: RestorationRule, steps: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    Descent,
    Ascent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestorationRule {
    /// The entry that rose in phase 1 is back at or below its start.
    FirstCrossing,
    /// Every entry is back on its starting side.
    BothWithinInit,
    /// `‖x − x0‖∞ ≤ 1e-12`.
    LInfZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumVariant {
    /// `v ← μv + g; x ← x − lr·v`
    HeavyBall,
    /// `v ← μv − lr·g; x ← x + v`
    LrScaled,
}

const L_INF_TOL: f64 = 1e-12;

/// Convention shared with the trainer's optimizer.
pub const FROZEN: Convention = Convention {
    sign: SignConvention::Descent,
    rule: RestorationRule::FirstCrossing,
    variant: MomentumVariant::HeavyBall,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Convention {
    pub sign: SignConvention,
    pub rule: RestorationRule,
    pub variant: MomentumVariant,
}

impl Convention {
    pub fn all() -> Vec<Convention> {
        let mut v = Vec::new();
        for sign in [SignConvention::Descent, SignConvention::Ascent] {
            for rule in [
                RestorationRule::FirstCrossing,
                RestorationRule::BothWithinInit,
                RestorationRule::LInfZero,
            ] {
                for variant in [MomentumVariant::HeavyBall, MomentumVariant::LrScaled] {
                    v.push(Convention {
                        sign,
                        rule,
                        variant,
                    });
                }
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub x0: Vec<f64>,
    pub dl_dy_phase1: Vec<f64>,
    pub dl_dy_phase2: Vec<f64>,
    /// Steps in phase 1.
    pub t1: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Phase-2 steps simulated.
    pub max_steps: usize,
    pub sign_convention: SignConvention,
    pub restoration_rule: RestorationRule,
    pub variant: MomentumVariant,
}

impl DynamicsConfig {
    /// Two-entry head at `[0.001, 0.001]`, `dl/dy = [1, −1]` for 25 steps then reversed.
    pub fn reference(lr: f64) -> Self {
        Self {
            x0: vec![0.001, 0.001],
            dl_dy_phase1: vec![1.0, -1.0],
            dl_dy_phase2: vec![-1.0, 1.0],
            t1: 25,
            lr,
            momentum: 0.9,
            max_steps: 1000,
            sign_convention: FROZEN.sign,
            restoration_rule: FROZEN.rule,
            variant: FROZEN.variant,
        }
    }

    pub fn with_convention(mut self, c: Convention) -> Self {
        self.sign_convention = c.sign;
        self.restoration_rule = c.rule;
        self.variant = c.variant;
        self
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let d = self.x0.len();
        if d < 2 {
            return Err(DynamicsError::Config("need at least 2 entries".into()));
        }
        if self.dl_dy_phase1.len() != d || self.dl_dy_phase2.len() != d {
            return Err(DynamicsError::Config(
                "gradient vectors must match x0 in length".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(DynamicsError::Config(format!(
                "lr must be >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DynamicsError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.t1 == 0 {
            return Err(DynamicsError::Config("t1 must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// States at steps `0..=t1 + max_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t1: usize,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.points.first().map_or(0, |p| p.x.len());
        let mut header = vec!["step".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("y_{i}")));
        out.write_record(&header)?;
        for (t, p) in self.points.iter().enumerate() {
            let row =
                std::iter::once(t.to_string()).chain(p.x.iter().chain(&p.y).map(|v| v.to_string()));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `∂l/∂x = J(y)ᵀ · ∂l/∂y`.
fn input_gradient(y: &[f64], dl_dy: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let j = softmax_jacobian(y)?;
    Ok((0..y.len())
        .map(|i| (0..y.len()).map(|k| j[k][i] * dl_dy[k]).sum())
        .collect())
}

pub fn run_two_phase(config: &DynamicsConfig) -> Result<Trajectory, DynamicsError> {
    config.validate()?;
    let d = config.x0.len();
    let sign = match config.sign_convention {
        SignConvention::Descent => 1.0,
        SignConvention::Ascent => -1.0,
    };
    let mut x = config.x0.clone();
    let mut v = vec![0.0; d];
    let mut points = vec![TrajectoryPoint {
        x: x.clone(),
        y: softmax(&x)?,
        velocity: v.clone(),
    }];
    for step in 0..config.t1 + config.max_steps {
        let dl_dy = if step < config.t1 {
            &config.dl_dy_phase1
        } else {
            &config.dl_dy_phase2
        };
        let g = input_gradient(&points[step].y, dl_dy)?;
        for i in 0..d {
            match config.variant {
                MomentumVariant::HeavyBall => heavy_ball_update(
                    &mut x[i],
                    &mut v[i],
                    sign * g[i],
                    config.lr,
                    config.momentum,
                    0.0,
                ),
                MomentumVariant::LrScaled => {
                    v[i] = config.momentum * v[i] - sign * config.lr * g[i];
                    x[i] += v[i];
                }
            }
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(DynamicsError::NonFinite { step: step + 1 });
        }
        points.push(TrajectoryPoint {
            x: x.clone(),
            y: softmax(&x)?,
            velocity: v.clone(),
        });
    }
    Ok(Trajectory {
        t1: config.t1,
        points,
    })
}

/// Phase-2 steps until `rule` holds.
pub fn restoration_epoch(traj: &Trajectory, rule: RestorationRule) -> Result<usize, DynamicsError> {
    let x0 = &traj.points[0].x;
    let at_switch = &traj
        .points
        .get(traj.t1)
        .ok_or_else(|| DynamicsError::Config("trajectory has no phase 2".into()))?
        .x;
    let drift: Vec<f64> = at_switch.iter().zip(x0).map(|(a, b)| a - b).collect();
    let risen = (0..drift.len()).fold(0, |best, i| if drift[i] > drift[best] { i } else { best });
    let holds = |x: &[f64]| match rule {
        RestorationRule::FirstCrossing => x[risen] <= x0[risen],
        RestorationRule::BothWithinInit => (0..x.len()).all(|i| {
            if drift[i] > 0.0 {
                x[i] <= x0[i]
            } else if drift[i] < 0.0 {
                x[i] >= x0[i]
            } else {
                true
            }
        }),
        RestorationRule::LInfZero => x.iter().zip(x0).all(|(a, b)| (a - b).abs() <= L_INF_TOL),
    };
    traj.points[traj.t1..]
        .iter()
        .position(|p| holds(&p.x))
        .ok_or(DynamicsError::NotRestored {
            rule,
            steps: traj.points.len() - 1 - traj.t1,
        })
}

/// Restoration time for the reference setup at `lr` under `convention`.
pub fn reference_t2(lr: f64, convention: Convention) -> Result<usize, DynamicsError> {
    let cfg = DynamicsConfig::reference(lr).with_convention(convention);
    restoration_epoch(&run_two_phase(&cfg)?, cfg.restoration_rule)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub convention: Convention,
    /// `t2` per target rate; `None` when the rule never held.
    pub t2: Vec<Option<usize>>,
    pub matches: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub targets: Vec<(f64, usize)>,
    pub entries: Vec<SweepEntry>,
    pub matching: Vec<Convention>,
    /// Lexicographically first match.
    pub frozen: Option<Convention>,
}

/// Reference target pairs `(lr, t2)`.
pub const TARGETS: [(f64, usize); 2] = [(0.001, 34), (0.01, 44)];

/// Tries every convention against all target pairs.
pub fn convention_sweep(targets: &[(f64, usize)]) -> Result<SweepReport, DynamicsError> {
    let mut entries = Vec::new();
    for convention in Convention::all() {
        let mut t2 = Vec::new();
        for &(lr, _) in targets {
            t2.push(match reference_t2(lr, convention) {
                Ok(t) => Some(t),
                Err(DynamicsError::NotRestored { .. }) => None,
                Err(e) => return Err(e),
            });
        }
        let matches = t2
            .iter()
            .zip(targets)
            .all(|(got, &(_, want))| *got == Some(want));
        entries.push(SweepEntry {
            convention,
            t2,
            matches,
        });
    }
    let mut matching: Vec<Convention> = entries
        .iter()
        .filter(|e| e.matches)
        .map(|e| e.convention)
        .collect();
    matching.sort();
    Ok(SweepReport {
        targets: targets.to_vec(),
        frozen: matching.first().copied(),
        entries,
        matching,
    })
}

/// `(y_i, Σ_k |∂y_k/∂x_i|)` for a two-entry softmax on an interior grid of `(0, 1)`.
pub fn jacobian_magnitude_profile(grid_size: usize) -> Result<Vec<(f64, f64)>, DynamicsError> {
    (1..=grid_size)
        .map(|k| {
            let yi = k as f64 / (grid_size + 1) as f64;
            let j = softmax_jacobian(&[yi, 1.0 - yi])?;
            Ok((yi, j.iter().map(|row| row[0].abs()).sum()))
        })
        .collect()
}
