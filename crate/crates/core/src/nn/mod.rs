//! Convolutional layers with analytic gradients, AdamW and the cyclic
//! learning-rate schedule.

mod act;
mod conv;
mod gemm;
pub mod gradcheck;
mod layer;
mod norm;
mod optim;
mod param;
mod schedule;

pub use act::{activation, activation_backward, ActKind, LRELU_SLOPE};
pub use conv::{
    conv2d, conv2d_backward, conv2d_matrix, conv_transpose2d, conv_transpose2d_backward, Conv2d,
    ConvGrads, ConvSpec, ConvTranspose2d,
};
pub use gradcheck::{
    grad_check, grad_check_piecewise, grad_check_subset, relative_error, Evaluation, GradCheckOptions, GradCheckReport,
};
pub use layer::{Block, BlockKind, Cache, Layer, Network, Tape};
pub use norm::{BatchNorm2d, NormCache, BN_EPS, BN_MOMENTUM};
pub use optim::{adamw_step, AdamW};
pub use param::Parameter;
pub use schedule::{cyclic_lr, LrPolicy, LrSchedule};

/// How batch normalization treats a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Batch statistics; running statistics left untouched. Used when a
    /// network is evaluated inside the other network's update.
    TrainFrozen,
    /// Running statistics.
    Eval,
}
