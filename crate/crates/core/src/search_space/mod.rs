//! Cell-based supernet: candidate operations, compound edges, mixed-op
//! forward pass and discretization of architecture parameters.
//!
//! The default candidate set mirrors NAS-Bench-201 with vector analogues:
//!
//! | name           | NAS-Bench-201   | behaviour                        |
//! |----------------|-----------------|----------------------------------|
//! | `none`         | `none`          | zeros                            |
//! | `skip_connect` | `skip_connect`  | identity                         |
//! | `op_small`     | `nor_conv_1x1`  | `relu(W x + b)`                  |
//! | `op_large`     | `nor_conv_3x3`  | two stacked affine + ReLU layers |
//! | `avg_smooth`   | `avg_pool_3x3`  | width-3 moving average           |

mod arch;
mod direct;
pub mod gradcheck;
mod ops;
mod supernet;

pub use arch::{discretize, ArchParams, Architecture, Genotype, GenotypeEdge};
pub use direct::{direct_loss, DirectEval};
pub use ops::{
    OpDescriptor, OpKind, OperationSet, AVG_SMOOTH, NONE, OP_LARGE, OP_SMALL, SKIP_CONNECT,
};
pub use supernet::{
    batch_loss, bind, evaluate_loss, mixed_edge_forward, mixed_edge_with_weights, op_forward,
    predicted_class, sample_forward, BatchLoss, BoundParams, GradMode, SupernetSpec, Weights,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
