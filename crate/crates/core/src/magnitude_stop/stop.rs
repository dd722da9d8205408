use std::collections::BTreeMap;

use super::criteria::{
    criterion_rank_stable, criterion_skip_count, learnable_ranking, residual_score, EdgeRanking,
};
use super::{
    criterion_peak, criterion_residual_peak, magnitude, MagnitudeTrace, StopCriterion, StopError,
};
use crate::bilevel::{BilevelTrainer, EpochMetrics};
use crate::harness::Dataset;
use crate::search_space::{discretize, ArchParams, Architecture, OperationSet};

/// Epochs without a new maximum before a running peak is declared final.
pub const DEFAULT_PATIENCE: usize = 5;

/// Evaluates a criterion epoch by epoch while a search is running.
#[derive(Clone, Debug)]
pub struct OnlineStopper {
    criterion: StopCriterion,
    ops: OperationSet,
    patience: usize,
    best: Option<(usize, f64, ArchParams)>,
    rankings: Vec<EdgeRanking>,
}

impl OnlineStopper {
    pub fn new(
        criterion: StopCriterion,
        ops: OperationSet,
        patience: usize,
    ) -> Result<Self, StopError> {
        criterion.validate(&ops)?;
        if patience == 0 {
            return Err(StopError::Domain("patience must be >= 1".into()));
        }
        Ok(Self {
            criterion,
            ops,
            patience,
            best: None,
            rankings: Vec::new(),
        })
    }

    pub fn criterion(&self) -> &StopCriterion {
        &self.criterion
    }

    /// Feeds the parameters at the end of `epoch`; returns the selected epoch
    /// and its parameters once the criterion fires.
    pub fn observe(
        &mut self,
        epoch: usize,
        arch: &ArchParams,
    ) -> Result<Option<(usize, ArchParams)>, StopError> {
        let peak_op = match &self.criterion {
            StopCriterion::Peak(op) | StopCriterion::ResidualPeak(op) => {
                Some(self.ops.require(op)?)
            }
            _ => None,
        };
        match (&self.criterion, peak_op) {
            (StopCriterion::SkipCount(k), _) => {
                Ok(criterion_skip_count(arch, &self.ops, *k)?.then(|| (epoch, arch.clone())))
            }
            (StopCriterion::RankStable(w), _) => {
                self.rankings.push(learnable_ranking(arch, &self.ops));
                Ok(criterion_rank_stable(&self.rankings, *w).then(|| (epoch, arch.clone())))
            }
            (c, Some(i)) => {
                let m = magnitude(arch);
                let score = match c {
                    StopCriterion::Peak(_) => m[i],
                    _ => residual_score(&m, i),
                };
                if self.best.as_ref().is_none_or(|&(_, b, _)| score > b) {
                    self.best = Some((epoch, score, arch.clone()));
                }
                let (best_epoch, _, best_arch) = self.best.as_ref().expect("set above");
                Ok((epoch - best_epoch >= self.patience).then(|| (*best_epoch, best_arch.clone())))
            }
            _ => unreachable!("peak criteria resolve an op index"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStop {
    /// Last epoch trained.
    pub stopped_at: usize,
    /// Epoch whose parameters were discretized.
    pub selected_epoch: usize,
    pub fired: bool,
    pub architecture: Architecture,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains until `stopper` fires or the schedule ends, then discretizes.
pub fn early_stop_run(
    trainer: &mut BilevelTrainer,
    train: &Dataset,
    val: &Dataset,
    mut stopper: OnlineStopper,
) -> Result<EarlyStop, StopError> {
    let mut metrics = Vec::new();
    while !trainer.is_finished() {
        metrics.push(trainer.run_epoch(train, val)?);
        let epoch = trainer.epoch();
        if let Some((selected_epoch, arch)) = stopper.observe(epoch, &trainer.state().arch)? {
            return Ok(EarlyStop {
                stopped_at: epoch,
                selected_epoch,
                fired: true,
                architecture: discretize(&arch),
                metrics,
            });
        }
    }
    Ok(EarlyStop {
        stopped_at: trainer.epoch(),
        selected_epoch: trainer.epoch(),
        fired: false,
        architecture: discretize(&trainer.state().arch),
        metrics,
    })
}

/// Read access to saved per-epoch architecture parameters.
pub trait CheckpointSource {
    fn has_epoch(&self, epoch: usize) -> bool;
    fn load_arch(&self, epoch: usize) -> Result<ArchParams, StopError>;
}

impl CheckpointSource for BTreeMap<usize, ArchParams> {
    fn has_epoch(&self, epoch: usize) -> bool {
        self.contains_key(&epoch)
    }

    fn load_arch(&self, epoch: usize) -> Result<ArchParams, StopError> {
        self.get(&epoch)
            .cloned()
            .ok_or(StopError::MissingCheckpoint { epoch })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub criterion: StopCriterion,
    pub epoch: usize,
    pub architecture: Architecture,
}

/// Post-hoc: locates each criterion's epoch over the whole run and rolls back
/// to that epoch's checkpoint. Count and stability rules fall back to the
/// last epoch when they never fire.
pub fn selective_stop(
    trace: &MagnitudeTrace,
    ops: &OperationSet,
    source: &dyn CheckpointSource,
    criteria: &[StopCriterion],
) -> Result<Vec<Selection>, StopError> {
    let last = trace.len();
    let mut out = Vec::with_capacity(criteria.len());
    for c in criteria {
        c.validate(ops)?;
        let epoch = match c {
            StopCriterion::Peak(op) => criterion_peak(trace, op)?,
            StopCriterion::ResidualPeak(op) => criterion_residual_peak(trace, op)?,
            StopCriterion::SkipCount(k) => {
                let mut hit = None;
                for t in (1..=last).filter(|&t| source.has_epoch(t)) {
                    if criterion_skip_count(&source.load_arch(t)?, ops, *k)? {
                        hit = Some(t);
                        break;
                    }
                }
                hit.unwrap_or(last)
            }
            StopCriterion::RankStable(w) => {
                let mut history = Vec::new();
                let mut hit = None;
                for t in 1..=last {
                    if !source.has_epoch(t) {
                        history.clear();
                        continue;
                    }
                    history.push(learnable_ranking(&source.load_arch(t)?, ops));
                    if criterion_rank_stable(&history, *w) {
                        hit = Some(t);
                        break;
                    }
                }
                hit.unwrap_or(last)
            }
        };
        out.push(Selection {
            criterion: c.clone(),
            epoch,
            architecture: discretize(&source.load_arch(epoch)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{OP_LARGE, SKIP_CONNECT};

    /// Parameters whose op_large share on every edge is `share`, the rest uniform.
    fn with_share(ops: &OperationSet, share: f64) -> ArchParams {
        let m = ops.len();
        let j = ops.index_of(OP_LARGE).unwrap();
        let rest = (1.0 - share) / (m - 1) as f64;
        let row: Vec<f64> = (0..m)
            .map(|i| if i == j { share.ln() } else { rest.ln() })
            .collect();
        ArchParams::from_rows(vec![row; 6]).unwrap()
    }

    #[test]
    fn patience_stops_after_unimodal_peak() {
        let ops = OperationSet::default();
        let shares = [
            0.2, 0.3, 0.4, 0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.2, 0.2,
        ];
        let mut s =
            OnlineStopper::new(StopCriterion::Peak(OP_LARGE.into()), ops.clone(), 5).unwrap();
        let mut fired = None;
        for (i, &p) in shares.iter().enumerate() {
            if let Some(hit) = s.observe(i + 1, &with_share(&ops, p)).unwrap() {
                fired = Some((i + 1, hit));
                break;
            }
        }
        let (at, (epoch, arch)) = fired.unwrap();
        assert_eq!((at, epoch), (9, 4));
        assert_eq!(arch, with_share(&ops, 0.5));
    }

    #[test]
    fn skip_count_fires_on_current_epoch() {
        let ops = OperationSet::default();
        let skip = ops.index_of(SKIP_CONNECT).unwrap();
        let mut s = OnlineStopper::new(StopCriterion::SkipCount(2), ops.clone(), 1).unwrap();
        let mut rows = vec![vec![0.0; 5]; 6];
        assert!(s
            .observe(1, &ArchParams::from_rows(rows.clone()).unwrap())
            .unwrap()
            .is_none());
        rows[0][skip] = 0.1;
        rows[5][skip] = 0.1;
        let a = ArchParams::from_rows(rows).unwrap();
        assert_eq!(s.observe(2, &a).unwrap(), Some((2, a)));
        assert!(OnlineStopper::new(StopCriterion::Peak("conv".into()), ops, 5).is_err());
    }

    fn recorded() -> (MagnitudeTrace, BTreeMap<usize, ArchParams>, OperationSet) {
        let ops = OperationSet::default();
        let shares = [0.2, 0.35, 0.6, 0.3, 0.25];
        let mut trace = MagnitudeTrace::new(ops.names().iter().map(|s| s.to_string()).collect());
        let mut ckpts = BTreeMap::new();
        for (i, &p) in shares.iter().enumerate() {
            let a = with_share(&ops, p);
            trace.push(magnitude(&a)).unwrap();
            ckpts.insert(i + 1, a);
        }
        (trace, ckpts, ops)
    }

    #[test]
    fn selective_rolls_back_to_peak() {
        let (trace, ckpts, ops) = recorded();
        let sel = selective_stop(
            &trace,
            &ops,
            &ckpts,
            &[StopCriterion::Peak(OP_LARGE.into())],
        )
        .unwrap();
        assert_eq!(sel[0].epoch, 3);
        assert_eq!(sel[0].architecture, discretize(&ckpts[&3]));

        let all: Vec<_> = ops
            .names()
            .iter()
            .map(|o| StopCriterion::Peak(o.to_string()))
            .collect();
        assert_eq!(selective_stop(&trace, &ops, &ckpts, &all).unwrap().len(), 5);
        assert!(selective_stop(&trace, &ops, &ckpts, &[])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn count_rules_fall_back_to_last_epoch() {
        let (trace, ckpts, ops) = recorded();
        let sel = selective_stop(&trace, &ops, &ckpts, &[StopCriterion::SkipCount(2)]).unwrap();
        assert_eq!(sel[0].epoch, 5);
        // epoch 1 is a tie ranked by index; op_large leads from epoch 2 on
        let sel = selective_stop(&trace, &ops, &ckpts, &[StopCriterion::RankStable(3)]).unwrap();
        assert_eq!(sel[0].epoch, 4);
    }

    #[test]
    fn missing_checkpoint_names_epoch() {
        let (trace, mut ckpts, ops) = recorded();
        ckpts.remove(&3);
        let err = selective_stop(
            &trace,
            &ops,
            &ckpts,
            &[StopCriterion::Peak(OP_LARGE.into())],
        )
        .unwrap_err();
        assert_eq!(err, StopError::MissingCheckpoint { epoch: 3 });
    }
}
