use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Dense row-major tensor of `f64` with an optional gradient slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.contains(&0) {
            return Err(AutodiffError::Domain(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::Shape {
                expected: shape,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), AutodiffError> {
        if grad.len() != self.data.len() {
            return Err(AutodiffError::Shape {
                expected: self.shape.clone(),
                got: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
