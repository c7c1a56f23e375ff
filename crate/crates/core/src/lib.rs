//! Dimensionality reduction with stacked dimension-reducing Transformer blocks.
//!
//! An image is cut into non-overlapping patches, each patch is flattened and
//! summed with a learned positional encoding, and the resulting sequence is
//! folded through encoder blocks whose feed-forward layers shrink the
//! per-patch width. A mirrored decoder grows the code back to pixels, and
//! both halves are trained jointly on reconstruction error.
//!
//! ```text
//! image ─ patchify ─ + pos ─ [block d0→d1] ─ … ─ [block dL-1→dL] ─ code
//! code ─ [block dL→dL-1] ─ … ─ [block d1→d0] ─ unpatchify ─ reconstruction
//!
//! block: h = LN1(x + MHA(x));  y = W2·GELU(W1·LN2(h) + b1) + b2
//! ```
//!
//! The crate is self-contained: [`tensor`] and [`autodiff`] provide the
//! numeric engine, [`nn`] the layers, [`model`] the encoder/decoder,
//! [`baselines`] the PCA / LDA / autoencoder comparisons, [`data`] the
//! loaders and patch utilities, [`training`] the optimizer loop and
//! checkpoints, and [`cli`] the `transdr` command-line tool.

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod training;

pub use autodiff::{OpKind, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
