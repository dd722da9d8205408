use serde::{Deserialize, Serialize};

use super::SpaceError;

/// Behaviour of a candidate operation on a `feature_dim` vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    /// Outputs zeros.
    Zero,
    Identity,
    /// `relu(W x + b)`.
    AffineRelu,
    /// `relu(W2 relu(W1 x + b1) + b2)`.
    TwoAffineRelu,
    /// Fixed centered moving average, no parameters.
    WindowMean {
        window: usize,
    },
}

impl OpKind {
    pub fn param_shapes(&self, feature_dim: usize) -> Vec<Vec<usize>> {
        let d = feature_dim;
        match self {
            OpKind::Zero | OpKind::Identity | OpKind::WindowMean { .. } => Vec::new(),
            OpKind::AffineRelu => vec![vec![d, d], vec![d]],
            OpKind::TwoAffineRelu => vec![vec![d, d], vec![d], vec![d, d], vec![d]],
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, OpKind::AffineRelu | OpKind::TwoAffineRelu)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: OpKind,
}

impl OpDescriptor {
    pub fn new(name: &str, kind: OpKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }
}

pub const NONE: &str = "none";
pub const SKIP_CONNECT: &str = "skip_connect";
pub const OP_SMALL: &str = "op_small";
pub const OP_LARGE: &str = "op_large";
pub const AVG_SMOOTH: &str = "avg_smooth";

/// Ordered candidate set shared by every compound edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OperationSet {
    ops: Vec<OpDescriptor>,
}

impl<'de> Deserialize<'de> for OperationSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            ops: Vec<OpDescriptor>,
        }
        let raw = Raw::deserialize(d)?;
        OperationSet::new(raw.ops).map_err(serde::de::Error::custom)
    }
}

impl Default for OperationSet {
    /// Five candidates in NAS-Bench-201 order: none, skip_connect,
    /// nor_conv_1x1, nor_conv_3x3, avg_pool_3x3.
    fn default() -> Self {
        Self {
            ops: vec![
                OpDescriptor::new(NONE, OpKind::Zero),
                OpDescriptor::new(SKIP_CONNECT, OpKind::Identity),
                OpDescriptor::new(OP_SMALL, OpKind::AffineRelu),
                OpDescriptor::new(OP_LARGE, OpKind::TwoAffineRelu),
                OpDescriptor::new(AVG_SMOOTH, OpKind::WindowMean { window: 3 }),
            ],
        }
    }
}

impl OperationSet {
    pub fn new(ops: Vec<OpDescriptor>) -> Result<Self, SpaceError> {
        if ops.is_empty() {
            return Err(SpaceError::Domain(
                "operation set needs at least one op".into(),
            ));
        }
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].iter().any(|o| o.name == op.name) {
                return Err(SpaceError::Domain(format!(
                    "duplicate operation name {:?}",
                    op.name
                )));
            }
            if let OpKind::WindowMean { window } = op.kind {
                if window == 0 || window.is_multiple_of(2) {
                    return Err(SpaceError::Domain(format!(
                        "{}: window must be odd, got {window}",
                        op.name
                    )));
                }
            }
        }
        Ok(Self { ops })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[OpDescriptor] {
        &self.ops
    }

    pub fn names(&self) -> Vec<&str> {
        self.ops.iter().map(|o| o.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.ops.iter().position(|o| o.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, SpaceError> {
        self.index_of(name)
            .ok_or_else(|| SpaceError::Domain(format!("unknown operation {name:?}")))
    }

    /// Indices of operations that carry trainable weights.
    pub fn learnable(&self) -> Vec<usize> {
        (0..self.ops.len())
            .filter(|&i| self.ops[i].kind.is_learnable())
            .collect()
    }

    /// New set without `name`, remaining order preserved.
    pub fn remove_operation(&self, name: &str) -> Result<Self, SpaceError> {
        let idx = self.require(name)?;
        if self.ops.len() < 2 {
            return Err(SpaceError::Domain(format!(
                "cannot remove {name:?}: it is the only operation"
            )));
        }
        let mut ops = self.ops.clone();
        ops.remove(idx);
        Ok(Self { ops })
    }
}
