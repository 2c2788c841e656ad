//! Differentiable building blocks with hand-written backward passes.
//!
//! The tensor layout throughout is `(batch, channels, frames, joints)` in
//! f64. Every forward returns a cache holding exactly the intermediates its
//! backward needs; forwards are pure (batch-norm running statistics are
//! updated explicitly by the caller after a training step).

mod batchnorm;
mod block;
mod graph_conv;
mod temporal;

pub use batchnorm::{BatchNorm, BatchNormCache};
pub use block::{AgcnBlock, BlockCache, Residual};
pub use graph_conv::{attention_matrix, row_softmax, AdaptiveParams, GraphConv, GraphConvCache};
pub use temporal::{temporal_output_len, TemporalConv};

use ndarray::Array4;

/// Activation tensor flowing through the network: (batch, channels, frames,
/// joints).
pub type FeatureMap = Array4<f64>;

/// Whether a forward pass runs with training behavior (dropout active,
/// batch statistics for normalization) or inference behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}
