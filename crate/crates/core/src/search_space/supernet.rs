use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ArchParams, OpKind, OperationSet, SpaceError};
use crate::autodiff::{Tape, Tensor, Var};

/// Shape of the supernet: stem, a stack of identical cell DAGs, classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupernetSpec {
    pub nodes_per_cell: usize,
    pub cells: usize,
    pub feature_dim: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub op_set: OperationSet,
}

impl Default for SupernetSpec {
    fn default() -> Self {
        Self {
            nodes_per_cell: 4,
            cells: 1,
            feature_dim: 16,
            input_dim: 16,
            classes: 4,
            op_set: OperationSet::default(),
        }
    }
}

impl SupernetSpec {
    pub fn validate(&self) -> Result<(), SpaceError> {
        let checks = [
            (self.nodes_per_cell >= 2, "nodes_per_cell must be >= 2"),
            (self.cells >= 1, "cells must be >= 1"),
            (self.feature_dim >= 1, "feature_dim must be >= 1"),
            (self.input_dim >= 1, "input_dim must be >= 1"),
            (self.classes >= 2, "classes must be >= 2"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(SpaceError::Domain(msg.into()));
            }
        }
        Ok(())
    }

    /// Compound edges `(from, to)` ordered by target node, then source.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (1..self.nodes_per_cell)
            .flat_map(|to| (0..to).map(move |from| (from, to)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.nodes_per_cell * (self.nodes_per_cell - 1) / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
struct WeightLayout {
    stem: (usize, usize),
    /// `[cell][edge][op]` → range of tensor indices.
    ops: Vec<Vec<Vec<Range<usize>>>>,
    classifier: (usize, usize),
}

/// Supernet weights ω in a flat canonical order with per-tensor names.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    layout: WeightLayout,
}

fn layout_for(spec: &SupernetSpec) -> (Vec<(String, Vec<usize>, usize)>, WeightLayout) {
    // (name, shape, fan_in)
    let mut entries = Vec::new();
    let d = spec.feature_dim;
    entries.push((
        "stem.w".to_string(),
        vec![d, spec.input_dim],
        spec.input_dim,
    ));
    entries.push(("stem.b".to_string(), vec![d], spec.input_dim));
    let stem = (0, 1);
    let edges = spec.edges();
    let mut ops = Vec::with_capacity(spec.cells);
    for c in 0..spec.cells {
        let mut cell = Vec::with_capacity(edges.len());
        for (from, to) in &edges {
            let mut per_op = Vec::with_capacity(spec.op_set.len());
            for op in spec.op_set.ops() {
                let start = entries.len();
                for (k, shape) in op.kind.param_shapes(d).into_iter().enumerate() {
                    let label = match (k / 2, k % 2) {
                        (layer, 0) => format!("w{}", layer + 1),
                        (layer, _) => format!("b{}", layer + 1),
                    };
                    entries.push((
                        format!("cell{c}.edge({from},{to}).{}.{label}", op.name),
                        shape,
                        d,
                    ));
                }
                per_op.push(start..entries.len());
            }
            cell.push(per_op);
        }
        ops.push(cell);
    }
    let k = spec.classes;
    let classifier = (entries.len(), entries.len() + 1);
    entries.push(("classifier.w".to_string(), vec![k, d], d));
    entries.push(("classifier.b".to_string(), vec![k], d));
    (
        entries,
        WeightLayout {
            stem,
            ops,
            classifier,
        },
    )
}

impl Weights {
    /// Uniform init in `±1/sqrt(fan_in)`, drawn in canonical tensor order.
    pub fn init<R: Rng + ?Sized>(spec: &SupernetSpec, rng: &mut R) -> Self {
        let (entries, layout) = layout_for(spec);
        let mut names = Vec::with_capacity(entries.len());
        let tensors = entries
            .into_iter()
            .map(|(name, shape, fan_in)| {
                names.push(name);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let len: usize = shape.iter().product();
                let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data)
                    .expect("layout shapes are consistent")
                    .with_requires_grad(true)
            })
            .collect();
        Self {
            tensors,
            names,
            layout,
        }
    }

    pub fn zeros(spec: &SupernetSpec) -> Self {
        let (entries, layout) = layout_for(spec);
        let (names, tensors) = entries
            .into_iter()
            .map(|(name, shape, _)| (name, Tensor::zeros(shape).with_requires_grad(true)))
            .unzip();
        Self {
            tensors,
            names,
            layout,
        }
    }

    /// Rebuilds weights from flat per-tensor data.
    pub fn from_data(spec: &SupernetSpec, data: Vec<Vec<f64>>) -> Result<Self, SpaceError> {
        let (entries, layout) = layout_for(spec);
        if entries.len() != data.len() {
            return Err(SpaceError::Domain(format!(
                "expected {} weight tensors, got {}",
                entries.len(),
                data.len()
            )));
        }
        let mut names = Vec::with_capacity(entries.len());
        let tensors = entries
            .into_iter()
            .zip(data)
            .map(|((name, shape, _), values)| {
                names.push(name);
                Ok(Tensor::new(shape, values)?.with_requires_grad(true))
            })
            .collect::<Result<_, SpaceError>>()?;
        Ok(Self {
            tensors,
            names,
            layout,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.data().to_vec()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn bit_pattern(&self) -> Vec<u64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[allow(clippy::type_complexity)]
    pub(crate) fn layout_parts(
        &self,
    ) -> ((usize, usize), &[Vec<Vec<Range<usize>>>], (usize, usize)) {
        (self.layout.stem, &self.layout.ops, self.layout.classifier)
    }

    pub(crate) fn check_against(&self, spec: &SupernetSpec) -> Result<(), SpaceError> {
        let (entries, _) = layout_for(spec);
        let ok = entries.len() == self.tensors.len()
            && entries
                .iter()
                .zip(&self.tensors)
                .all(|((_, shape, _), t)| shape.as_slice() == t.shape());
        if ok {
            Ok(())
        } else {
            Err(SpaceError::Domain(
                "weights do not match the supernet layout".into(),
            ))
        }
    }
}

/// Which parameter groups the tape should track gradients for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradMode {
    pub weights: bool,
    pub arch: bool,
}

impl GradMode {
    pub const NONE: Self = Self {
        weights: false,
        arch: false,
    };
    pub const WEIGHTS: Self = Self {
        weights: true,
        arch: false,
    };
    pub const ARCH: Self = Self {
        weights: false,
        arch: true,
    };
    pub const ALL: Self = Self {
        weights: true,
        arch: true,
    };
}

/// Parameters recorded as leaves on one tape.
#[derive(Debug)]
pub struct BoundParams {
    pub weights: Vec<Var>,
    pub alphas: Vec<Var>,
    /// `softmax(α_e)[m]` as one-element vars, `[edge][op]`.
    mixture: Vec<Vec<Var>>,
    layout: WeightLayout,
}

/// Records ω and A on `tape` and precomputes the per-edge mixture weights.
pub fn bind(
    tape: &mut Tape,
    spec: &SupernetSpec,
    weights: &Weights,
    arch: &ArchParams,
    mode: GradMode,
) -> Result<BoundParams, SpaceError> {
    spec.validate()?;
    weights.check_against(spec)?;
    arch.check_against(spec)?;
    let weight_vars = weights
        .tensors
        .iter()
        .map(|t| tape.param(t, mode.weights))
        .collect();
    let mut alphas = Vec::with_capacity(arch.num_edges());
    let mut mixture = Vec::with_capacity(arch.num_edges());
    for t in arch.tensors() {
        let a = tape.param(t, mode.arch);
        let w = tape.softmax(a)?;
        mixture.push(
            (0..t.len())
                .map(|m| tape.index(w, m))
                .collect::<Result<Vec<_>, _>>()?,
        );
        alphas.push(a);
    }
    Ok(BoundParams {
        weights: weight_vars,
        alphas,
        mixture,
        layout: weights.layout.clone(),
    })
}

/// Output of a single candidate op, `None` for the zero op.
pub fn op_forward(
    tape: &mut Tape,
    kind: &OpKind,
    x: Var,
    params: &[Var],
) -> Result<Option<Var>, SpaceError> {
    let affine = |tape: &mut Tape, x: Var, w: Var, b: Var| -> Result<Var, SpaceError> {
        let h = tape.matvec(w, x)?;
        let h = tape.add(h, b)?;
        Ok(tape.relu(h)?)
    };
    let expected = match kind {
        OpKind::AffineRelu => 2,
        OpKind::TwoAffineRelu => 4,
        _ => 0,
    };
    if params.len() != expected {
        return Err(SpaceError::Domain(format!(
            "{kind:?} expects {expected} parameter tensors, got {}",
            params.len()
        )));
    }
    Ok(match kind {
        OpKind::Zero => None,
        OpKind::Identity => Some(x),
        OpKind::AffineRelu => Some(affine(tape, x, params[0], params[1])?),
        OpKind::TwoAffineRelu => {
            let h = affine(tape, x, params[0], params[1])?;
            Some(affine(tape, h, params[2], params[3])?)
        }
        OpKind::WindowMean { window } => Some(tape.window_mean(x, *window)?),
    })
}

/// `Σ_m mix[m] · o_m(x)` given precomputed mixture weights.
pub fn mixed_edge_with_weights(
    tape: &mut Tape,
    op_set: &OperationSet,
    x: Var,
    op_params: &[&[Var]],
    mix: &[Var],
) -> Result<Var, SpaceError> {
    if op_params.len() != op_set.len() || mix.len() != op_set.len() {
        return Err(SpaceError::Domain(format!(
            "edge has {} ops but got {} parameter groups and {} weights",
            op_set.len(),
            op_params.len(),
            mix.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for ((op, params), &w) in op_set.ops().iter().zip(op_params).zip(mix) {
        if let Some(out) = op_forward(tape, &op.kind, x, params)? {
            let term = tape.scalar_mul(w, out)?;
            acc = Some(match acc {
                None => term,
                Some(s) => tape.add(s, term)?,
            });
        }
    }
    match acc {
        Some(v) => Ok(v),
        None => {
            let len = tape.value(x).len();
            Ok(tape.constant(vec![len], vec![0.0; len])?)
        }
    }
}

/// Mixed operation on one compound edge: `Σ_m softmax(α)_m · o_m(x)`.
pub fn mixed_edge_forward(
    tape: &mut Tape,
    op_set: &OperationSet,
    x: Var,
    op_params: &[&[Var]],
    alpha_edge: Var,
) -> Result<Var, SpaceError> {
    if tape.shape(alpha_edge) != [op_set.len()] {
        return Err(SpaceError::Domain(format!(
            "alpha has shape {:?}, expected [{}]",
            tape.shape(alpha_edge),
            op_set.len()
        )));
    }
    let w = tape.softmax(alpha_edge)?;
    let mix = (0..op_set.len())
        .map(|m| tape.index(w, m))
        .collect::<Result<Vec<_>, _>>()?;
    mixed_edge_with_weights(tape, op_set, x, op_params, &mix)
}

/// Logits for a single sample.
pub fn sample_forward(
    tape: &mut Tape,
    spec: &SupernetSpec,
    bound: &BoundParams,
    features: &[f64],
) -> Result<Var, SpaceError> {
    if features.len() != spec.input_dim {
        return Err(SpaceError::Domain(format!(
            "sample has {} features, supernet expects {}",
            features.len(),
            spec.input_dim
        )));
    }
    let w = &bound.weights;
    let layout = &bound.layout;
    let x = tape.vector(features);
    let h = tape.matvec(w[layout.stem.0], x)?;
    let mut h = tape.add(h, w[layout.stem.1])?;
    let edges = spec.edges();
    for cell in &layout.ops {
        let mut nodes: Vec<Option<Var>> = vec![None; spec.nodes_per_cell];
        nodes[0] = Some(h);
        for (e, &(from, to)) in edges.iter().enumerate() {
            let input = nodes[from].expect("source node computed before its out-edges");
            let params: Vec<&[Var]> = cell[e].iter().map(|r| &w[r.clone()]).collect();
            let out =
                mixed_edge_with_weights(tape, &spec.op_set, input, &params, &bound.mixture[e])?;
            nodes[to] = Some(match nodes[to] {
                None => out,
                Some(acc) => tape.add(acc, out)?,
            });
        }
        h = nodes[spec.nodes_per_cell - 1].expect("last node has in-edges");
    }
    let logits = tape.matvec(w[layout.classifier.0], h)?;
    Ok(tape.add(logits, w[layout.classifier.1])?)
}

/// Recorded mean cross-entropy over a batch.
#[derive(Debug)]
pub struct BatchLoss {
    pub loss: Var,
    pub sample_losses: Vec<f64>,
    pub correct: Vec<bool>,
}

pub fn batch_loss(
    tape: &mut Tape,
    spec: &SupernetSpec,
    bound: &BoundParams,
    features: &[&[f64]],
    labels: &[usize],
) -> Result<BatchLoss, SpaceError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(SpaceError::Domain(format!(
            "batch has {} samples and {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut sample_losses = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    for (x, &y) in features.iter().zip(labels) {
        let logits = sample_forward(tape, spec, bound, x)?;
        correct.push(predicted_class(tape.value(logits)) == y);
        let l = tape.cross_entropy(logits, y)?;
        sample_losses.push(tape.value(l)[0]);
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.expect("non-empty batch");
    let loss = tape.scale(total, 1.0 / labels.len() as f64)?;
    Ok(BatchLoss {
        loss,
        sample_losses,
        correct,
    })
}

/// Argmax, lowest index on ties.
pub fn predicted_class(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Mean loss of a batch without gradient tracking.
pub fn evaluate_loss(
    spec: &SupernetSpec,
    weights: &Weights,
    arch: &ArchParams,
    features: &[&[f64]],
    labels: &[usize],
) -> Result<f64, SpaceError> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, spec, weights, arch, GradMode::NONE)?;
    let out = batch_loss(&mut tape, spec, &bound, features, labels)?;
    Ok(tape.value(out.loss)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{OpDescriptor, NONE, SKIP_CONNECT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn skip_zero_set() -> OperationSet {
        OperationSet::new(vec![
            OpDescriptor::new(SKIP_CONNECT, OpKind::Identity),
            OpDescriptor::new(NONE, OpKind::Zero),
        ])
        .unwrap()
    }

    #[test]
    fn uniform_skip_and_zero_halves_input() {
        let ops = skip_zero_set();
        let mut tape = Tape::new();
        let x = tape.vector(&[1.0, -2.0, 4.0]);
        let alpha = tape.vector(&[0.0, 0.0]);
        let y = mixed_edge_forward(&mut tape, &ops, x, &[&[], &[]], alpha).unwrap();
        assert_eq!(tape.value(y), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn saturated_skip_passes_input() {
        let ops = OperationSet::default();
        let spec = SupernetSpec {
            feature_dim: 4,
            ..SupernetSpec::default()
        };
        let weights = Weights::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let wv: Vec<Var> = weights.tensors().iter().map(|t| tape.leaf(t)).collect();
        let r = &weights.layout.ops[0][0];
        let params: Vec<&[Var]> = r.iter().map(|r| &wv[r.clone()]).collect();
        let xs = [0.3, -0.7, 1.1, 0.05];
        let x = tape.vector(&xs);
        let alpha = tape.vector(&[-20.0, 20.0, -20.0, -20.0, -20.0]);
        let y = mixed_edge_forward(&mut tape, &ops, x, &params, alpha).unwrap();
        for (a, b) in tape.value(y).iter().zip(xs) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn alpha_length_mismatch() {
        let ops = skip_zero_set();
        let mut tape = Tape::new();
        let x = tape.vector(&[1.0]);
        let alpha = tape.vector(&[0.0, 0.0, 0.0]);
        assert!(mixed_edge_forward(&mut tape, &ops, x, &[&[], &[]], alpha).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let spec = SupernetSpec {
            cells: 2,
            feature_dim: 5,
            input_dim: 3,
            classes: 4,
            ..SupernetSpec::default()
        };
        let weights = Weights::zeros(&spec);
        let arch = ArchParams::for_spec(&spec);
        let xs = [[0.4, -1.0, 2.0], [3.0, 0.1, -0.2]];
        let feats: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let loss = evaluate_loss(&spec, &weights, &arch, &feats, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_skip_edge_is_identity_path() {
        let spec = SupernetSpec {
            nodes_per_cell: 2,
            cells: 1,
            feature_dim: 3,
            input_dim: 2,
            classes: 2,
            op_set: OperationSet::new(vec![OpDescriptor::new(SKIP_CONNECT, OpKind::Identity)])
                .unwrap(),
        };
        assert_eq!(spec.num_edges(), 1);
        let weights = Weights::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let arch = ArchParams::for_spec(&spec);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &spec, &weights, &arch, GradMode::NONE).unwrap();
        let x = [0.25, -1.5];
        let logits = sample_forward(&mut tape, &spec, &bound, &x).unwrap();

        let t = weights.tensors();
        let lin = |w: &Tensor, b: &Tensor, v: &[f64]| -> Vec<f64> {
            let cols = w.shape()[1];
            w.data()
                .chunks(cols)
                .zip(b.data())
                .map(|(row, bi)| row.iter().zip(v).map(|(a, c)| a * c).sum::<f64>() + bi)
                .collect()
        };
        let stem = lin(&t[0], &t[1], &x);
        let expected = lin(&t[2], &t[3], &stem);
        assert_eq!(tape.value(logits), expected.as_slice());
    }

    #[test]
    fn default_topology() {
        let spec = SupernetSpec::default();
        assert_eq!(spec.num_edges(), 6);
        assert_eq!(
            spec.edges(),
            vec![(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]
        );
    }

    #[test]
    fn weight_names_are_unique_and_ordered() {
        let spec = SupernetSpec {
            cells: 2,
            ..SupernetSpec::default()
        };
        let w = Weights::zeros(&spec);
        let names = w.names();
        assert_eq!(names[0], "stem.w");
        assert_eq!(names.last().unwrap(), "classifier.b");
        assert!(names.iter().any(|n| n == "cell1.edge(2,3).op_large.w2"));
        let mut sorted = names.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        // 2 stem + 2 cells * 6 edges * (2 + 4) + 2 classifier
        assert_eq!(names.len(), 2 + 2 * 6 * 6 + 2);
    }

    #[test]
    fn from_data_rejects_mismatch() {
        let spec = SupernetSpec::default();
        assert!(Weights::from_data(&spec, vec![vec![0.0]]).is_err());
        let w = Weights::zeros(&spec);
        assert_eq!(Weights::from_data(&spec, w.data()).unwrap(), w);
    }

    #[test]
    fn sample_dim_mismatch() {
        let spec = SupernetSpec::default();
        let w = Weights::zeros(&spec);
        let a = ArchParams::for_spec(&spec);
        let feats: Vec<&[f64]> = vec![&[1.0, 2.0]];
        assert!(evaluate_loss(&spec, &w, &a, &feats, &[0]).is_err());
    }
}
