//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass; parameters enter as
//! leaves via [`Tape::leaf`] and receive gradients from [`Tape::backward`]
//! only when their [`Tensor`] has `requires_grad` set.

mod softmax;
mod tape;
mod tensor;

pub use softmax::{softmax, softmax_jacobian};
#[doc(hidden)]
pub use tape::Fault;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: expected {expected:?}, got {got} elements")]
    Shape { expected: Vec<usize>, got: usize },
    #[error("tape state error: {0}")]
    State(String),
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let hi = f(&probe);
            probe[i] = orig - eps;
            let lo = f(&probe);
            probe[i] = orig;
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
