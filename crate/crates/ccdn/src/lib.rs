//! Differentiable numerical kit for cross-order channel-attention landmark
//! regression, verified end to end at desk scale.
//!
//! The crate provides, bottom up:
//!
//! - a float64 reverse-mode engine ([`tape`], [`ops`], [`gradcheck`]) whose
//!   primitives cover convolutions, batch norm, covariance pooling, and the
//!   Newton-Schulz matrix square root;
//! - channel attention over first- and second-order descriptors ([`ctm`]) and
//!   the cross-semantic decorrelation regularizer with its fusing block
//!   ([`cocs`]);
//! - a small stacked-hourglass coordinate regressor assembling the above
//!   ([`model`], [`train`]), with ablation variants;
//! - a synthetic landmark benchmark with pose, occlusion, and noise controls
//!   ([`data`]), evaluation metrics ([`eval`]), and run plumbing
//!   ([`config`], [`checkpoint`]).
//!
//! Start with the `examples/` directory; each example exercises one capability
//! end to end.

pub mod checkpoint;
pub mod cli;
pub mod cocs;
pub mod config;
pub mod ctm;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tape::{GradStore, Tape, Var};
pub use tensor::Tensor;
