//! Covariance pooling and the Newton-Schulz square-root iteration.

use super::elem::{self, Act};
use super::matmul::batch_matmul_nt;
use crate::error::{shape_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Subtract the mean over the last axis from each row: [B,D,N] -> [B,D,N].
/// Adjoint is itself (I − 11ᵀ/N is symmetric), so backward re-centers g.
pub fn center_rows(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 3 {
            return Err(shape_err("center_rows", format!("want [B,D,N], got {:?}", d)));
        }
        let n = d[2];
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(n) {
            let m: f64 = row.iter().sum::<f64>() / n as f64;
            for v in row {
                *v -= m;
            }
        }
        Ok(out)
    })?;
    let xi = x.id;
    Ok(tape.push(
        value,
        tape.needs_grad(x),
        Box::new(move |vals, g, store| {
            if store.wants_id(xi) {
                let n = vals[xi].dims()[2];
                let acc = store.accum(xi, vals[xi].dims());
                for (dst_row, g_row) in acc.data_mut().chunks_mut(n).zip(g.data().chunks(n)) {
                    let m: f64 = g_row.iter().sum::<f64>() / n as f64;
                    for (dst, &gv) in dst_row.iter_mut().zip(g_row) {
                        *dst += gv - m;
                    }
                }
            }
        }),
    ))
}

/// Per-item channel covariance Σ = X̄·C·X̄ᵀ with the (1/N)(I − 11ᵀ/N)
/// centering operator: [B,D,N] -> [B,D,D], symmetric PSD.
pub fn covariance(tape: &Tape, x: Var) -> Result<Var> {
    let dims = tape.dims(x);
    if dims.len() != 3 {
        return Err(shape_err("covariance", format!("want [B,D,N], got {:?}", dims)));
    }
    let n = dims[2];
    if n < 2 {
        return Err(Error::Numerics(format!(
            "covariance needs at least 2 spatial positions, got {}",
            n
        )));
    }
    let xc = center_rows(tape, x)?;
    let prod = batch_matmul_nt(tape, xc, xc)?;
    elem::scale(tape, prod, 1.0 / n as f64)
}

/// Matrix square root of a symmetric PSD matrix by the coupled Newton-Schulz
/// iteration: Y₀ = A, Z₀ = I, Yₖ₊₁ = ½Yₖ(3I − ZₖYₖ), Zₖ₊₁ = ½(3I − ZₖYₖ)Zₖ.
///
/// The iteration only converges when A's spectrum sits in (0, 2), so Σ is
/// pre-scaled by m = max(tr/D, λ̄/2), where λ̄ = μ + σ√(D−1) bounds the top
/// eigenvalue (μ, σ² are the spectrum's mean and variance, both available
/// from traces). Dividing by plain tr(Σ) would shrink well-conditioned
/// spectra by ~1/D and five iterations could not pull them back; this scaling
/// keeps Σ = c·I an exact fixed point and meets the 1e-2 residual bound on
/// conditioned random matrices. The result is compensated by √m.
///
/// Gradients flow by ordinary tape replay of the iteration.
pub fn newton_schulz_sqrt(tape: &Tape, sigma: Var, iters: usize) -> Result<Var> {
    let dims = tape.dims(sigma);
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(shape_err("newton_schulz_sqrt", format!("want [D,D], got {:?}", dims)));
    }
    if iters == 0 {
        return Err(shape_err("newton_schulz_sqrt", "iters must be >= 1"));
    }
    let d = dims[0];
    let tr_val = tape.with_value(sigma, |t| (0..d).map(|i| t.data()[i * d + i]).sum::<f64>());
    if tr_val <= 0.0 {
        return Err(Error::Numerics(format!(
            "newton_schulz_sqrt needs trace > 0, got {}",
            tr_val
        )));
    }

    let tr = super::reduce::trace(tape, sigma)?;
    let mu = elem::scale(tape, tr, 1.0 / d as f64)?;
    // tr(Σ²) as the entrywise square sum (Σ symmetric).
    let sumsq = super::reduce::sum(tape, elem::square(tape, sigma)?)?;
    let mean_sq = elem::scale(tape, sumsq, 1.0 / d as f64)?;
    let var = elem::activate(tape, elem::sub(tape, mean_sq, elem::square(tape, mu)?)?, Act::Relu)?;
    // Tiny offset keeps sqrt differentiable at var = 0; the max() below is
    // then decided by μ, so exact-identity inputs stay exact.
    let var_safe = elem::add(tape, var, tape.constant(Tensor::scalar(1e-30)))?;
    let sigma_spread = elem::sqrt(tape, var_safe)?;
    let lam_max = elem::add(
        tape,
        mu,
        elem::scale(tape, sigma_spread, ((d - 1) as f64).sqrt())?,
    )?;
    let m = elem::maximum(tape, mu, elem::scale(tape, lam_max, 0.5)?)?;

    let a = elem::div_scalar_var(tape, sigma, m)?;
    let three_i = tape.constant(Tensor::eye(d).map(|v| 3.0 * v));
    let mut y = a;
    let mut z = tape.constant(Tensor::eye(d));
    for _ in 0..iters {
        let zy = super::matmul::matmul(tape, z, y)?;
        let t = elem::scale(tape, elem::sub(tape, three_i, zy)?, 0.5)?;
        y = super::matmul::matmul(tape, y, t)?;
        z = super::matmul::matmul(tape, t, z)?;
    }
    elem::mul_scalar_var(tape, y, elem::sqrt(tape, m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::ops::{gap, matmul, reshape, row_means, sum};
    use crate::testutil::{eig_sqrt, rand_spd, rand_tensor, scalarize};
    use crate::tensor::Tensor;

    fn cov_value(x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        tape.value(covariance(&tape, v).unwrap())
    }

    fn ns_value(sigma: &Tensor, iters: usize) -> Tensor {
        let tape = Tape::new();
        let v = tape.constant(sigma.clone());
        tape.value(newton_schulz_sqrt(&tape, v, iters).unwrap())
    }

    /// Textbook covariance: sigma_{dd'} = (1/N) sum_i (x_d,i - mu_d)(x_d',i - mu_d').
    fn naive_cov(x: &Tensor) -> Tensor {
        let (b, d, n) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let mut out = Tensor::zeros(&[b, d, d]);
        for bi in 0..b {
            let mut mu = vec![0.0; d];
            for di in 0..d {
                for i in 0..n {
                    mu[di] += x.data()[(bi * d + di) * n + i];
                }
                mu[di] /= n as f64;
            }
            for p in 0..d {
                for q in 0..d {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += (x.data()[(bi * d + p) * n + i] - mu[p])
                            * (x.data()[(bi * d + q) * n + i] - mu[q]);
                    }
                    out.data_mut()[(bi * d + p) * d + q] = acc / n as f64;
                }
            }
        }
        out
    }

    #[test]
    fn identical_channels_give_rank_one_covariance() {
        let row = rand_tensor(201, &[1, 1, 6]);
        let mut x = Tensor::zeros(&[1, 2, 6]);
        x.data_mut()[0..6].copy_from_slice(row.data());
        x.data_mut()[6..12].copy_from_slice(row.data());
        let sigma = cov_value(&x);
        let s = sigma.data();
        assert!((s[0] - s[1]).abs() < 1e-14);
        assert!((s[0] - s[2]).abs() < 1e-14);
        assert!((s[0] - s[3]).abs() < 1e-14);
    }

    #[test]
    fn constant_input_has_zero_covariance() {
        let x = Tensor::full(&[2, 3, 5], 2.7);
        assert!(cov_value(&x).max_abs_diff(&Tensor::zeros(&[2, 3, 3])) < 1e-14);
    }

    #[test]
    fn orthogonal_centered_rows_give_diagonal_covariance() {
        // Rows of a 4-point DFT-like basis: centered and mutually orthogonal.
        let x = Tensor::new(
            &[1, 3, 4],
            vec![
                1.0, -1.0, 1.0, -1.0, // alternating
                1.0, 1.0, -1.0, -1.0, // halves
                1.0, -1.0, -1.0, 1.0, // pairs
            ],
        )
        .unwrap();
        let sigma = cov_value(&x);
        for p in 0..3 {
            for q in 0..3 {
                let v = sigma.data()[p * 3 + q];
                if p == q {
                    assert!((v - 1.0).abs() < 1e-14);
                } else {
                    assert!(v.abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn covariance_matches_textbook_oracle_and_is_symmetric() {
        let x = rand_tensor(202, &[3, 4, 7]);
        let sigma = cov_value(&x);
        assert!(sigma.max_abs_diff(&naive_cov(&x)) < 1e-12);
        for b in 0..3 {
            for p in 0..4 {
                for q in 0..4 {
                    let a = sigma.data()[(b * 4 + p) * 4 + q];
                    let t = sigma.data()[(b * 4 + q) * 4 + p];
                    assert!((a - t).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_needs_two_positions() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 1]));
        assert!(covariance(&tape, x).is_err());
    }

    #[test]
    fn sqrt_of_identity_is_identity_at_every_iteration() {
        for iters in 1..=5 {
            let out = ns_value(&Tensor::eye(4), iters);
            assert!(out.max_abs_diff(&Tensor::eye(4)) < 1e-12, "iters={iters}");
        }
    }

    #[test]
    fn sqrt_of_scaled_identity() {
        for &c in &[0.25, 3.0, 17.5] {
            let sigma = Tensor::eye(4).map(|v| v * c);
            let want = Tensor::eye(4).map(|v| v * c.sqrt());
            assert!(ns_value(&sigma, 5).max_abs_diff(&want) < 1e-6, "c={c}");
        }
    }

    #[test]
    fn sqrt_of_diag_4_1_approaches_diag_2_1() {
        let sigma = Tensor::new(&[2, 2], vec![4.0, 0.0, 0.0, 1.0]).unwrap();
        let want = Tensor::new(&[2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(ns_value(&sigma, 5).max_abs_diff(&want) < 1e-2);
        // More iterations only tighten it.
        assert!(ns_value(&sigma, 7).max_abs_diff(&want) < ns_value(&sigma, 5).max_abs_diff(&want));
    }

    #[test]
    fn sqrt_matches_eigendecomposition_oracle_on_random_spd() {
        for &d in &[4usize, 8, 16] {
            for trial in 0..4u64 {
                let sigma = rand_spd(3000 + 10 * d as u64 + trial, d, 100.0);
                let got = ns_value(&sigma, 5);
                let want = eig_sqrt(&sigma);
                // Against the exact square root the five-step iterate is only
                // a few percent off at condition 100; the binding accuracy
                // contract is the residual below.
                let mut dn = 0.0;
                for (a, b) in got.data().iter().zip(want.data()) {
                    dn += (a - b) * (a - b);
                }
                let diff = dn.sqrt() / want.frob_norm();
                assert!(diff < 5e-2, "D={d} trial {trial} diff {diff}");
                // Residual of the square against the input: the pinned bound.
                let tape = Tape::new();
                let y = tape.constant(got.clone());
                let sq = tape.value(matmul(&tape, y, y).unwrap());
                let mut num = 0.0;
                for (a, b) in sq.data().iter().zip(sigma.data()) {
                    num += (a - b) * (a - b);
                }
                let rel = num.sqrt() / sigma.frob_norm();
                assert!(rel < 1e-2, "D={d} trial {trial} residual {rel}");
                // Symmetry of the iterate.
                for p in 0..d {
                    for q in 0..d {
                        let diff = (got.data()[p * d + q] - got.data()[q * d + p]).abs();
                        assert!(diff < 1e-8, "D={d} asymmetry {diff}");
                    }
                }
            }
        }
    }

    #[test]
    fn sqrt_rejects_nonpositive_trace() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(newton_schulz_sqrt(&tape, z, 5).is_err());
    }

    #[test]
    fn center_rows_removes_row_means() {
        let x = rand_tensor(203, &[2, 3, 5]);
        let tape = Tape::new();
        let v = tape.constant(x);
        let out = tape.value(center_rows(&tape, v).unwrap());
        for b in 0..2 {
            for d in 0..3 {
                let s: f64 = out.data()[(b * 3 + d) * 5..(b * 3 + d + 1) * 5].iter().sum();
                assert!(s.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradcheck_covariance_and_centering() {
        for trial in 0..3u64 {
            let x = rand_tensor(1400 + trial, &[2, 3, 6]);
            let rep = gradcheck(
                |t, xs| scalarize(t, center_rows(t, xs[0])?, 7),
                &[x.clone()],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "center_rows trial {trial}: {rep}");
            let rep = gradcheck(
                |t, xs| scalarize(t, covariance(t, xs[0])?, 7),
                &[x],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "covariance trial {trial}: {rep}");
        }
    }

    // The pinned harness case: square root of a covariance, gradients by
    // replaying the iteration. Looser tolerance for the iterated matrix ops.
    #[test]
    fn gradcheck_sqrt_of_covariance_chain() {
        for trial in 0..3u64 {
            let x = rand_tensor(1500 + trial, &[1, 4, 9]);
            let rep = gradcheck(
                |t, xs| {
                    let sigma = covariance(t, xs[0])?;
                    let sb = reshape(t, sigma, &[4, 4])?;
                    let y = newton_schulz_sqrt(t, sb, 5)?;
                    scalarize(t, y, 7)
                },
                &[x],
                1e-5,
                1e-3,
            )
            .unwrap();
            assert!(rep.pass, "trial {trial}: {rep}");
        }
        // And through to a squeeze-style readout: row means then a map pool.
        let x = rand_tensor(1510, &[1, 4, 3, 3]);
        let rep = gradcheck(
            |t, xs| {
                let flat = reshape(t, xs[0], &[1, 4, 9])?;
                let sigma = covariance(t, flat)?;
                let sb = reshape(t, sigma, &[4, 4])?;
                let y = newton_schulz_sqrt(t, sb, 5)?;
                let rm = reshape(t, y, &[1, 4, 4])?;
                let km = row_means(t, rm)?;
                let gl = gap(t, xs[0])?;
                sum(t, crate::ops::mul(t, km, gl)?)
            },
            &[x],
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(rep.pass, "{rep}");
    }
}
