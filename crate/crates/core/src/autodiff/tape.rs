//! Define-by-run computation tape.
//!
//! Every primitive appends a node whose inputs already exist on the tape, so
//! append order is a topological order and [`Tape::backward`] is a single
//! reverse sweep.

use super::softmax::softmax;
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-rule corruption, used as a negative control for the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes the upstream gradient through regardless of sign.
    ReluPassThrough,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatVec {
        w: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add(Var, Var),
    Relu(Var),
    WindowMean {
        x: Var,
        window: usize,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    ScalarMul {
        s: Var,
        x: Var,
    },
    Softmax(Var),
    Index {
        x: Var,
        at: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Ordered record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Result of a backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss wrt `var`, if any flowed into it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Writes the gradient for `var` into `tensor.grad`, zeros when nothing
    /// flowed. Tensors that do not require grad are left untouched.
    pub fn write_into(&self, var: Var, tensor: &mut Tensor) -> Result<(), AutodiffError> {
        if !tensor.requires_grad() {
            return Ok(());
        }
        let grad = match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tensor.len()],
        };
        tensor.set_grad(grad)
    }
}

fn window_bounds(i: usize, len: usize, window: usize) -> (usize, usize) {
    let half = window / 2;
    (i.saturating_sub(half), (i + half + 1).min(len))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Option<Fault>) -> Self {
        Self {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check(&self, v: Var) -> Result<(), AutodiffError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::State(format!(
                "variable {} is not on this tape",
                v.0
            )))
        }
    }

    fn vector_len(&self, v: Var) -> Result<usize, AutodiffError> {
        self.check(v)?;
        let shape = &self.nodes[v.0].shape;
        if shape.len() != 1 {
            return Err(AutodiffError::Domain(format!(
                "expected a vector, got shape {shape:?}"
            )));
        }
        Ok(shape[0])
    }

    /// Records `tensor` as a leaf; gradients are tracked iff it requires grad.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            Op::Leaf,
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad(),
        )
    }

    /// Records `tensor` as a leaf with gradient tracking set explicitly.
    pub fn param(&mut self, tensor: &Tensor, requires_grad: bool) -> Var {
        self.push(
            Op::Leaf,
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            requires_grad,
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, AutodiffError> {
        let t = Tensor::new(shape, data)?;
        let shape = t.shape().to_vec();
        Ok(self.push(Op::Constant, shape, t.data().to_vec(), false))
    }

    pub fn vector(&mut self, data: &[f64]) -> Var {
        self.push(Op::Constant, vec![data.len()], data.to_vec(), false)
    }

    /// `w · x` for `w` of shape `(rows, cols)` and `x` of length `cols`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, AutodiffError> {
        self.check(w)?;
        let cols_x = self.vector_len(x)?;
        let (rows, cols) = match self.nodes[w.0].shape.as_slice() {
            &[r, c] => (r, c),
            s => {
                return Err(AutodiffError::Domain(format!(
                    "matvec expects a matrix, got shape {s:?}"
                )))
            }
        };
        if cols != cols_x {
            return Err(AutodiffError::Shape {
                expected: vec![cols],
                got: cols_x,
            });
        }
        let wd = &self.nodes[w.0].value;
        let xd = &self.nodes[x.0].value;
        let out: Vec<f64> = wd
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let ng = self.needs(w) || self.needs(x);
        Ok(self.push(Op::MatVec { w, x, rows, cols }, vec![rows], out, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(AutodiffError::Shape {
                expected: self.nodes[a.0].shape.clone(),
                got: self.nodes[b.0].value.len(),
            });
        }
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), shape, out, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let out = self.nodes[x.0].value.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        Ok(self.push(Op::Relu(x), shape, out, ng))
    }

    /// Centered moving average over `window` entries (odd), clipped at the
    /// borders so that each output divides by the number of entries it saw.
    pub fn window_mean(&mut self, x: Var, window: usize) -> Result<Var, AutodiffError> {
        let len = self.vector_len(x)?;
        if window == 0 || window.is_multiple_of(2) {
            return Err(AutodiffError::Domain(format!(
                "window must be odd and positive, got {window}"
            )));
        }
        let xd = &self.nodes[x.0].value;
        let out = (0..len)
            .map(|i| {
                let (lo, hi) = window_bounds(i, len, window);
                xd[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let ng = self.needs(x);
        Ok(self.push(Op::WindowMean { x, window }, vec![len], out, ng))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let out = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        Ok(self.push(Op::Scale { x, factor }, shape, out, ng))
    }

    /// Product of a one-element tensor `s` with every entry of `x`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var, AutodiffError> {
        self.check(s)?;
        self.check(x)?;
        if self.nodes[s.0].value.len() != 1 {
            return Err(AutodiffError::Shape {
                expected: vec![1],
                got: self.nodes[s.0].value.len(),
            });
        }
        let k = self.nodes[s.0].value[0];
        let out = self.nodes[x.0].value.iter().map(|v| k * v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(s) || self.needs(x);
        Ok(self.push(Op::ScalarMul { s, x }, shape, out, ng))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let len = self.vector_len(x)?;
        let out = softmax(&self.nodes[x.0].value)?;
        let ng = self.needs(x);
        Ok(self.push(Op::Softmax(x), vec![len], out, ng))
    }

    pub fn index(&mut self, x: Var, at: usize) -> Result<Var, AutodiffError> {
        let len = self.vector_len(x)?;
        if at >= len {
            return Err(AutodiffError::Domain(format!(
                "index {at} out of range for length {len}"
            )));
        }
        let v = self.nodes[x.0].value[at];
        let ng = self.needs(x);
        Ok(self.push(Op::Index { x, at }, vec![1], vec![v], ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let v = self.nodes[x.0].value.iter().sum();
        let ng = self.needs(x);
        Ok(self.push(Op::Sum(x), vec![1], vec![v], ng))
    }

    /// `-log softmax(logits)[target]`, computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, AutodiffError> {
        let len = self.vector_len(logits)?;
        if target >= len {
            return Err(AutodiffError::Domain(format!(
                "target class {target} out of range for {len} logits"
            )));
        }
        let z = &self.nodes[logits.0].value;
        let probs = softmax(z)?;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        let ng = self.needs(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            vec![1],
            vec![loss],
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::State(
                "backward called before any forward pass was recorded".into(),
            ));
        }
        self.check(loss)?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::Domain(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatVec { w, x, rows, cols } => {
                    if self.needs(*w) {
                        let xd = &self.nodes[x.0].value;
                        let g = slot(&mut grads, *w, rows * cols);
                        for (r, &u) in upstream.iter().enumerate() {
                            for (gi, xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(xd) {
                                *gi += u * xv;
                            }
                        }
                    }
                    if self.needs(*x) {
                        let wd = &self.nodes[w.0].value;
                        let g = slot(&mut grads, *x, *cols);
                        for (r, &u) in upstream.iter().enumerate() {
                            for (gi, wv) in g.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                                *gi += u * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            accumulate(slot(&mut grads, v, upstream.len()), &upstream);
                        }
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let xd = &self.nodes[x.0].value;
                        let pass = self.fault == Some(Fault::ReluPassThrough);
                        let g = slot(&mut grads, *x, xd.len());
                        for ((gi, &u), &xv) in g.iter_mut().zip(&upstream).zip(xd) {
                            if pass || xv > 0.0 {
                                *gi += u;
                            }
                        }
                    }
                }
                Op::WindowMean { x, window } => {
                    if self.needs(*x) {
                        let len = upstream.len();
                        let g = slot(&mut grads, *x, len);
                        for (i, &u) in upstream.iter().enumerate() {
                            let (lo, hi) = window_bounds(i, len, *window);
                            let share = u / (hi - lo) as f64;
                            for gi in &mut g[lo..hi] {
                                *gi += share;
                            }
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if self.needs(*x) {
                        let g = slot(&mut grads, *x, upstream.len());
                        for (gi, u) in g.iter_mut().zip(&upstream) {
                            *gi += factor * u;
                        }
                    }
                }
                Op::ScalarMul { s, x } => {
                    let xd = &self.nodes[x.0].value;
                    if self.needs(*s) {
                        let dot: f64 = upstream.iter().zip(xd).map(|(u, v)| u * v).sum();
                        slot(&mut grads, *s, 1)[0] += dot;
                    }
                    if self.needs(*x) {
                        let k = self.nodes[s.0].value[0];
                        let g = slot(&mut grads, *x, xd.len());
                        for (gi, u) in g.iter_mut().zip(&upstream) {
                            *gi += k * u;
                        }
                    }
                }
                Op::Softmax(x) => {
                    if self.needs(*x) {
                        // J^T u with J = diag(y) - y y^T
                        let y = &node.value;
                        let dot: f64 = upstream.iter().zip(y).map(|(u, v)| u * v).sum();
                        let g = slot(&mut grads, *x, y.len());
                        for ((gi, &u), &yi) in g.iter_mut().zip(&upstream).zip(y) {
                            *gi += yi * (u - dot);
                        }
                    }
                }
                Op::Index { x, at } => {
                    if self.needs(*x) {
                        let len = self.nodes[x.0].value.len();
                        slot(&mut grads, *x, len)[*at] += upstream[0];
                    }
                }
                Op::Sum(x) => {
                    if self.needs(*x) {
                        let len = self.nodes[x.0].value.len();
                        for gi in slot(&mut grads, *x, len) {
                            *gi += upstream[0];
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    if self.needs(*logits) {
                        let g = slot(&mut grads, *logits, probs.len());
                        for (k, (gi, p)) in g.iter_mut().zip(probs).enumerate() {
                            let onehot = if k == *target { 1.0 } else { 0.0 };
                            *gi += upstream[0] * (p - onehot);
                        }
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(upstream);
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
