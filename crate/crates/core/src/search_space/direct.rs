//! Tape-free evaluation of the supernet loss.
//!
//! Used as the fast function under finite differences; it shares no code with
//! the tape forward pass beyond the weight layout.

use super::{ArchParams, OpKind, SpaceError, SupernetSpec, Weights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectEval {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Smallest `|z|` over every ReLU input; distance to the nearest kink.
    pub relu_margin: f64,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(
        w.chunks_exact(cols)
            .zip(b)
            .map(|(row, bi)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bi),
    );
}

fn relu_in_place(v: &mut [f64], margin: &mut f64) {
    for z in v {
        *margin = margin.min(z.abs());
        *z = z.max(0.0);
    }
}

pub fn direct_loss(
    spec: &SupernetSpec,
    weights: &Weights,
    arch: &ArchParams,
    features: &[&[f64]],
    labels: &[usize],
) -> Result<DirectEval, SpaceError> {
    spec.validate()?;
    weights.check_against(spec)?;
    arch.check_against(spec)?;
    if features.is_empty() || features.len() != labels.len() {
        return Err(SpaceError::Domain("empty or mismatched batch".into()));
    }
    let t = weights.tensors();
    let (layout_stem, layout_ops, layout_cls) = weights.layout_parts();
    let mix = arch.mixture_weights();
    let edges = spec.edges();
    let d = spec.feature_dim;
    let mut margin = f64::INFINITY;
    let mut total = 0.0;
    let mut hidden = Vec::with_capacity(d);
    let mut scratch = Vec::with_capacity(d);
    let mut out = Vec::with_capacity(d);

    for (x, &y) in features.iter().zip(labels) {
        if x.len() != spec.input_dim {
            return Err(SpaceError::Domain("sample dimension mismatch".into()));
        }
        let mut h = Vec::with_capacity(d);
        affine(t[layout_stem.0].data(), t[layout_stem.1].data(), x, &mut h);
        for cell in layout_ops {
            let mut nodes = vec![vec![0.0; d]; spec.nodes_per_cell];
            nodes[0] = h;
            for (e, &(from, to)) in edges.iter().enumerate() {
                let input = nodes[from].clone();
                for (m, op) in spec.op_set.ops().iter().enumerate() {
                    let p = &t[cell[e][m].clone()];
                    match &op.kind {
                        OpKind::Zero => continue,
                        OpKind::Identity => {
                            out.clear();
                            out.extend_from_slice(&input);
                        }
                        OpKind::AffineRelu => {
                            affine(p[0].data(), p[1].data(), &input, &mut out);
                            relu_in_place(&mut out, &mut margin);
                        }
                        OpKind::TwoAffineRelu => {
                            affine(p[0].data(), p[1].data(), &input, &mut hidden);
                            relu_in_place(&mut hidden, &mut margin);
                            affine(p[2].data(), p[3].data(), &hidden, &mut out);
                            relu_in_place(&mut out, &mut margin);
                        }
                        OpKind::WindowMean { window } => {
                            let half = window / 2;
                            out.clear();
                            for i in 0..d {
                                let lo = i.saturating_sub(half);
                                let hi = (i + half + 1).min(d);
                                out.push(input[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
                            }
                        }
                    }
                    let w = mix[e][m];
                    for (n, o) in nodes[to].iter_mut().zip(&out) {
                        *n += w * o;
                    }
                }
            }
            h = nodes.pop().expect("at least two nodes");
        }
        affine(
            t[layout_cls.0].data(),
            t[layout_cls.1].data(),
            &h,
            &mut scratch,
        );
        let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scratch.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - scratch[y];
    }
    Ok(DirectEval {
        loss: total / labels.len() as f64,
        relu_margin: margin,
    })
}
