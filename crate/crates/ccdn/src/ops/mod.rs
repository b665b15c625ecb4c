//! Differentiable primitives. Every op validates shapes eagerly, computes its
//! value, and registers a backward closure on the tape.

pub mod conv;
pub mod elem;
pub mod linalg;
pub mod matmul;
mod mm;
pub mod norm;
pub mod reduce;
pub mod shape;

pub use conv::{avgpool2, conv2d, deconv2d, upsample2};
pub use elem::{activate, add, div_scalar_var, div_scalars, maximum, mul, mul_scalar_var, scale, sqrt, square, sub, Act};
pub use linalg::{center_rows, covariance, newton_schulz_sqrt};
pub use matmul::{batch_matmul_nt, linear, matmul, matmul_nt};
pub use norm::{batchnorm, BnState, Mode, BN_EPS, BN_MOMENTUM};
pub use reduce::{diag, gap, l2_normalize_rows, mean, row_means, sum, sum_rows, trace};
pub use shape::{batch_item, broadcast_mul_channel, concat_channels, reshape, stack};
