//! Sparse training by magnitude thresholding.
//!
//! Weights are kept dense and trained through a thresholded view: the forward
//! pass uses `P_T(w)` from a family of operators between soft and hard
//! thresholding, the backward pass treats the operator as the identity and
//! scales gradients of pruned weights by `theta`. Thresholds follow a cubic
//! sparsity schedule, selected either globally or per layer.

pub mod analysis;
pub mod backbones;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod feather;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod thresholding;
pub mod trainer;

pub use backbones::{Backbone, BackboneKind, SparsitySchedule};
pub use error::{Error, Result};
pub use feather::{GradScalePolicy, PruneLayerState};
pub use model::{Architecture, Model};
pub use par::Exec;
pub use tensor::{Tape, Tensor, Var};
pub use thresholding::{ThresholdOperator, ThresholdValue};
pub use trainer::{train, train_dense, TrainConfig, TrainOutcome};
