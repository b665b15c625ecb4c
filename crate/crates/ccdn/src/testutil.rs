//! Shared helpers for unit tests: deterministic random tensors, SPD matrix
//! construction, and an eigendecomposition square-root oracle (nalgebra).

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;
use crate::ops;
use crate::rng::stream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub fn rand_tensor(seed: u64, dims: &[usize]) -> Tensor {
    rand_tensor_in(seed, dims, -1.0, 1.0)
}

pub fn rand_tensor_in(seed: u64, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = stream(seed, "testutil");
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(dims, data).unwrap()
}

/// Random values bounded away from zero (|v| in [gap, 1]), for ops with a
/// kink or pole at zero where finite differences would be invalid.
pub fn rand_tensor_off_zero(seed: u64, dims: &[usize], gap: f64) -> Tensor {
    let mut rng = stream(seed, "testutil-offzero");
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(dims, data).unwrap()
}

/// Reduces any tensor to a scalar via a fixed random positive weighting.
/// Plain sums can have structurally zero gradients (e.g. batch norm), which
/// would let a wrong backward pass slip through.
pub fn scalarize(tape: &Tape, v: Var, seed: u64) -> Result<Var> {
    let dims = tape.dims(v);
    let w = tape.constant(rand_tensor_in(seed, &dims, 0.5, 1.5));
    ops::sum(tape, ops::mul(tape, v, w)?)
}

/// Random symmetric positive definite matrix with condition number `cond`:
/// Q diag(lambda) Q^T with lambda log-spaced in [1, cond] and Q from a QR
/// factorization of a random matrix.
pub fn rand_spd(seed: u64, d: usize, cond: f64) -> Tensor {
    let mut rng = stream(seed, "testutil-spd");
    let m = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let q = m.qr().q();
    let lambdas: Vec<f64> = (0..d)
        .map(|i| {
            if d == 1 {
                1.0
            } else {
                cond.powf(i as f64 / (d - 1) as f64)
            }
        })
        .collect();
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambdas));
    let sigma = &q * lam * q.transpose();
    // Symmetrize to kill round-off asymmetry from the triple product.
    let sym = (&sigma + sigma.transpose()) * 0.5;
    dmatrix_to_tensor(&sym)
}

/// Principal square root via symmetric eigendecomposition, the reference
/// against which the Newton-Schulz iteration is judged.
pub fn eig_sqrt(t: &Tensor) -> Tensor {
    let d = t.dims()[0];
    let m = tensor_to_dmatrix(t, d);
    let eig = m.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    dmatrix_to_tensor(&s)
}

pub fn tensor_to_dmatrix(t: &Tensor, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |r, c| t.data()[r * d + c])
}

pub fn dmatrix_to_tensor(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[i * c + j] = m[(i, j)];
        }
    }
    Tensor::new(&[r, c], data).unwrap()
}
