//! Parameterized layers.
//!
//! Layers do not own their tensors. They hold [`ParamId`]s into a
//! [`ParamSet`]; a forward pass first binds the whole set onto a tape with
//! [`ParamSet::bind`] and afterwards pulls the gradients back with
//! [`ParamSet::accumulate_grads`].

mod attention;
mod block;
mod feedforward;
mod init;
mod linear;
mod norm;
mod params;

pub use attention::MultiHeadAttention;
pub use block::{NormPlacement, TransformerBlock};
pub use feedforward::FeedForward;
pub use init::{seeded_rng, xavier_uniform, xavier_bound};
pub use linear::Linear;
pub use norm::LayerNorm;
pub use params::{Bindings, ParamId, ParamSet};

/// Largest divisor of `d` not exceeding 4.
pub fn heads_for(d: usize) -> usize {
    (1..=4.min(d)).rev().find(|h| d % h == 0).unwrap_or(1)
}
