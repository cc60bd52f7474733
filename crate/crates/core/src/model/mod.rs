//! The decoder-only transformer: configuration, parameters, the
//! prefix-visible attention mask, and forward/reverse passes.

mod config;
mod mask;
mod network;
mod params;
mod real;

pub use config::ModelConfig;
pub use mask::{build_mask, AttentionMask};
pub use network::{
    backward, batch_loss, cross_entropy, forward, forward_batch, loss, loss_and_gradients,
    positional_encoding, teacher_forced, ForwardCache,
};
pub use params::{is_norm_param, BlockParams, ModelParams, Tensor};
pub use real::{matmul, matmul_nt, matmul_tn, Real};
