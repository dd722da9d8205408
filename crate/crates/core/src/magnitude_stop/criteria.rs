use std::fmt;
use std::str::FromStr;

use super::{MagnitudeTrace, StopError};
use crate::search_space::{discretize, ArchParams, OperationSet, SKIP_CONNECT};

/// A rule that picks a stopping epoch from the search history.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StopCriterion {
    /// Epoch where one operation's magnitude is largest.
    Peak(String),
    /// Epoch where one operation most exceeds all the others combined.
    ResidualPeak(String),
    /// First epoch whose discretization has at least `k` skip connections.
    SkipCount(usize),
    /// First epoch closing a `window`-long run of identical learnable-op rankings.
    RankStable(usize),
}

impl StopCriterion {
    /// File-name friendly label, e.g. `peak_op_large`, `sc_2`.
    pub fn label(&self) -> String {
        match self {
            StopCriterion::Peak(op) => format!("peak_{op}"),
            StopCriterion::ResidualPeak(op) => format!("residual_{op}"),
            StopCriterion::SkipCount(k) => format!("sc_{k}"),
            StopCriterion::RankStable(w) => format!("rt_{w}"),
        }
    }

    /// Parses a comma-separated list; blank input gives an empty list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>, StopError> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }

    pub fn validate(&self, ops: &OperationSet) -> Result<(), StopError> {
        match self {
            StopCriterion::Peak(op) => ops.require(op).map(|_| ()).map_err(Into::into),
            StopCriterion::ResidualPeak(op) => {
                ops.require(op)?;
                if ops.len() < 2 {
                    return Err(StopError::Domain(
                        "residual criterion needs at least 2 operations".into(),
                    ));
                }
                Ok(())
            }
            StopCriterion::SkipCount(_) => {
                ops.require(SKIP_CONNECT).map(|_| ()).map_err(Into::into)
            }
            StopCriterion::RankStable(_) => Ok(()),
        }
    }
}

impl fmt::Display for StopCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopCriterion::Peak(op) => write!(f, "peak:{op}"),
            StopCriterion::ResidualPeak(op) => write!(f, "residual:{op}"),
            StopCriterion::SkipCount(k) => write!(f, "sc:{k}"),
            StopCriterion::RankStable(w) => write!(f, "rt:{w}"),
        }
    }
}

impl FromStr for StopCriterion {
    type Err = StopError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            StopError::Domain(format!(
                "bad criterion {s:?}; expected peak:<op>, residual:<op>, sc:<k> or rt:<window>"
            ))
        };
        let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        let count = |a: &str| match a.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(bad()),
        };
        match kind {
            "peak" if !arg.is_empty() => Ok(StopCriterion::Peak(arg.to_string())),
            "residual" if !arg.is_empty() => Ok(StopCriterion::ResidualPeak(arg.to_string())),
            "sc" => count(arg).map(StopCriterion::SkipCount),
            "rt" => count(arg).map(StopCriterion::RankStable),
            _ => Err(bad()),
        }
    }
}

/// Earliest 1-based index of the maximum.
fn first_argmax(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i + 1)
}

pub fn criterion_peak(trace: &MagnitudeTrace, op: &str) -> Result<usize, StopError> {
    let i = trace.op_index(op)?;
    first_argmax(trace.rows().iter().map(|r| r[i]))
        .ok_or_else(|| StopError::Domain("empty magnitude trace".into()))
}

/// `Σ_{j≠i} (m_i − m_j)`.
pub fn residual_score(row: &[f64], i: usize) -> f64 {
    row.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &mj)| row[i] - mj)
        .sum()
}

pub fn criterion_residual_peak(trace: &MagnitudeTrace, op: &str) -> Result<usize, StopError> {
    if trace.num_ops() < 2 {
        return Err(StopError::Domain(
            "residual criterion needs at least 2 operations".into(),
        ));
    }
    let i = trace.op_index(op)?;
    first_argmax(trace.rows().iter().map(|r| residual_score(r, i)))
        .ok_or_else(|| StopError::Domain("empty magnitude trace".into()))
}

pub fn criterion_skip_count(
    arch: &ArchParams,
    ops: &OperationSet,
    k: usize,
) -> Result<bool, StopError> {
    let skip = ops.require(SKIP_CONNECT)?;
    Ok(discretize(arch).count_of(skip) >= k)
}

/// Per edge, learnable op indices ordered by descending α (lower index first on ties).
pub type EdgeRanking = Vec<Vec<usize>>;

pub fn learnable_ranking(arch: &ArchParams, ops: &OperationSet) -> EdgeRanking {
    let learnable = ops.learnable();
    (0..arch.num_edges())
        .map(|e| {
            let row = arch.edge(e);
            let mut idx = learnable.clone();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Whether the last `window` rankings are all identical.
pub fn criterion_rank_stable(history: &[EdgeRanking], window: usize) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    tail.iter().all(|r| r == &tail[0])
}
