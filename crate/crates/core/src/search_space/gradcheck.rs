//! Finite-difference audit of supernet gradients over randomized instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    batch_loss, bind, direct_loss, ArchParams, GradMode, SpaceError, SupernetSpec, Weights,
};
use crate::autodiff::{relative_error, Fault, Tape};

pub const FD_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error; gradients below this are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;
/// Instances with a ReLU input closer than this to zero are redrawn: a
/// central difference straddling the kink measures neither one-sided slope.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradFailure {
    pub trial: usize,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Instances redrawn because of [`KINK_MARGIN`].
    pub redrawn: usize,
    pub failures: Vec<GradFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// A random supernet small enough for exhaustive finite differences:
/// up to 3 cells, feature_dim up to 16, all five default ops.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (SupernetSpec, Weights, ArchParams, Vec<Vec<f64>>, Vec<usize>) {
    let spec = SupernetSpec {
        nodes_per_cell: rng.random_range(2..=4),
        cells: rng.random_range(1..=3),
        feature_dim: rng.random_range(2..=16),
        input_dim: rng.random_range(2..=6),
        classes: rng.random_range(2..=4),
        ..SupernetSpec::default()
    };
    let weights = Weights::init(&spec, rng);
    let rows = (0..spec.num_edges())
        .map(|_| {
            (0..spec.op_set.len())
                .map(|_| rng.random_range(-1.5..1.5))
                .collect()
        })
        .collect();
    let arch = ArchParams::from_rows(rows).expect("finite rows");
    let batch = 2;
    let xs = (0..batch)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect()
        })
        .collect();
    let ys = (0..batch)
        .map(|_| rng.random_range(0..spec.classes))
        .collect();
    (spec, weights, arch, xs, ys)
}

/// Compares backward() against central differences for every ω and α entry
/// of `trials` random supernets.
pub fn gradcheck(
    trials: usize,
    seed: u64,
    fault: Option<Fault>,
) -> Result<GradcheckReport, SpaceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        trials,
        ..GradcheckReport::default()
    };
    for trial in 0..trials {
        let (spec, weights, arch, xs, ys) = loop {
            let inst = random_instance(&mut rng);
            let feats: Vec<&[f64]> = inst.3.iter().map(Vec::as_slice).collect();
            if direct_loss(&inst.0, &inst.1, &inst.2, &feats, &inst.4)?.relu_margin >= KINK_MARGIN {
                break inst;
            }
            report.redrawn += 1;
        };
        let feats: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let loss_at = |w: &Weights, a: &ArchParams| -> Result<f64, SpaceError> {
            Ok(direct_loss(&spec, w, a, &feats, &ys)?.loss)
        };

        let mut tape = Tape::with_fault(fault);
        let bound = bind(&mut tape, &spec, &weights, &arch, GradMode::ALL)?;
        let out = batch_loss(&mut tape, &spec, &bound, &feats, &ys)?;
        let grads = tape.backward(out.loss)?;

        let mut check = |name: &str, index: usize, analytic: f64, numeric: f64| {
            let rel = relative_error(analytic, numeric, REL_FLOOR);
            report.entries_checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > TOLERANCE {
                report.failures.push(GradFailure {
                    trial,
                    tensor: name.to_string(),
                    index,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        };

        let mut probe = weights.clone();
        for (t, var) in bound.weights.iter().enumerate() {
            let analytic = grads
                .get(*var)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; weights.tensors()[t].len()]);
            for (i, &a) in analytic.iter().enumerate() {
                let orig = probe.tensors()[t].data()[i];
                probe.tensors_mut()[t].data_mut()[i] = orig + FD_EPS;
                let hi = loss_at(&probe, &arch)?;
                probe.tensors_mut()[t].data_mut()[i] = orig - FD_EPS;
                let lo = loss_at(&probe, &arch)?;
                probe.tensors_mut()[t].data_mut()[i] = orig;
                check(&weights.names()[t], i, a, (hi - lo) / (2.0 * FD_EPS));
            }
        }

        let mut probe = arch.clone();
        for (e, var) in bound.alphas.iter().enumerate() {
            let analytic = grads
                .get(*var)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; arch.num_ops()]);
            for (i, &a) in analytic.iter().enumerate() {
                let orig = probe.edge(e)[i];
                probe.tensors_mut()[e].data_mut()[i] = orig + FD_EPS;
                let hi = loss_at(&weights, &probe)?;
                probe.tensors_mut()[e].data_mut()[i] = orig - FD_EPS;
                let lo = loss_at(&weights, &probe)?;
                probe.tensors_mut()[e].data_mut()[i] = orig;
                let (from, to) = spec.edges()[e];
                check(
                    &format!("alpha.edge({from},{to})"),
                    i,
                    a,
                    (hi - lo) / (2.0 * FD_EPS),
                );
            }
        }
    }
    Ok(report)
}
