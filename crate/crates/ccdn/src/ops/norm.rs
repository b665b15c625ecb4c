//! Batch normalization over [B,D,H,J] with running statistics.

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Weight on the previous running statistic when blending in a new batch.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics; not differentiated, updated only in train mode.
/// Variance is stored with the same biased convention used for normalizing.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub mean: Tensor,
    pub var: Tensor,
}

impl BnState {
    pub fn new(d: usize) -> Self {
        Self { mean: Tensor::zeros(&[d]), var: Tensor::full(&[d], 1.0) }
    }
}

pub fn batchnorm(
    tape: &Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BnState,
    momentum: f64,
    eps: f64,
    mode: Mode,
) -> Result<Var> {
    let dims = tape.dims(x);
    if dims.len() != 4 {
        return Err(shape_err("batchnorm", format!("want [B,D,H,J], got {:?}", dims)));
    }
    let (b, d, hw) = (dims[0], dims[1], dims[2] * dims[3]);
    if tape.dims(gamma) != [d] || tape.dims(beta) != [d] {
        return Err(shape_err("batchnorm", format!("gamma/beta must be [{}]", d)));
    }
    let n = b * hw;
    if n == 0 {
        return Err(shape_err("batchnorm", "empty input"));
    }

    // Normalization statistics: batch moments in train mode, running in eval.
    let (mu, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => tape.with_value(x, |t| {
            let mut mu = vec![0.0; d];
            let mut var = vec![0.0; d];
            for bi in 0..b {
                for di in 0..d {
                    let plane = &t.data()[(bi * d + di) * hw..(bi * d + di + 1) * hw];
                    mu[di] += plane.iter().sum::<f64>();
                }
            }
            for m in &mut mu {
                *m /= n as f64;
            }
            for bi in 0..b {
                for di in 0..d {
                    let plane = &t.data()[(bi * d + di) * hw..(bi * d + di + 1) * hw];
                    var[di] += plane.iter().map(|&v| (v - mu[di]) * (v - mu[di])).sum::<f64>();
                }
            }
            for v in &mut var {
                *v /= n as f64;
            }
            (mu, var)
        }),
        Mode::Eval => (state.mean.data().to_vec(), state.var.data().to_vec()),
    };

    if mode == Mode::Train {
        for di in 0..d {
            let rm = &mut state.mean.data_mut()[di];
            *rm = momentum * *rm + (1.0 - momentum) * mu[di];
            let rv = &mut state.var.data_mut()[di];
            *rv = momentum * *rv + (1.0 - momentum) * var[di];
        }
    }

    let inv_sigma: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let value = tape.with_two(x, gamma, |tx, tg| {
        let mut out = Tensor::zeros(&dims);
        tape.with_value(beta, |tb| {
            for bi in 0..b {
                for di in 0..d {
                    let (ga, be) = (tg.data()[di], tb.data()[di]);
                    let scale = ga * inv_sigma[di];
                    let base = (bi * d + di) * hw;
                    for (o, &v) in out.data_mut()[base..base + hw]
                        .iter_mut()
                        .zip(&tx.data()[base..base + hw])
                    {
                        *o = (v - mu[di]) * scale + be;
                    }
                }
            }
        });
        out
    });

    let needs = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
    let (xi, gi, bi_id) = (x.id, gamma.id, beta.id);
    let train = mode == Mode::Train;
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            let xdat = vals[xi].data();
            let gdat = g.data();
            // Per-channel reductions shared by all three gradients.
            let mut sum_g = vec![0.0; d];
            let mut sum_gx = vec![0.0; d]; // Σ g·x̂
            for bb in 0..b {
                for di in 0..d {
                    let base = (bb * d + di) * hw;
                    let mut sg = 0.0;
                    let mut sgx = 0.0;
                    for (&gv, &xv) in gdat[base..base + hw].iter().zip(&xdat[base..base + hw]) {
                        sg += gv;
                        sgx += gv * (xv - mu[di]) * inv_sigma[di];
                    }
                    sum_g[di] += sg;
                    sum_gx[di] += sgx;
                }
            }
            if store.wants_id(bi_id) {
                let acc = store.accum(bi_id, vals[bi_id].dims());
                for (dst, &v) in acc.data_mut().iter_mut().zip(&sum_g) {
                    *dst += v;
                }
            }
            if store.wants_id(gi) {
                let acc = store.accum(gi, vals[gi].dims());
                for (dst, &v) in acc.data_mut().iter_mut().zip(&sum_gx) {
                    *dst += v;
                }
            }
            if store.wants_id(xi) {
                let gamma_dat = vals[gi].data();
                let acc = store.accum(xi, vals[xi].dims());
                for bb in 0..b {
                    for di in 0..d {
                        let base = (bb * d + di) * hw;
                        let scale = gamma_dat[di] * inv_sigma[di];
                        if train {
                            let mg = sum_g[di] / n as f64;
                            let mgx = sum_gx[di] / n as f64;
                            for ((dst, &gv), &xv) in acc.data_mut()[base..base + hw]
                                .iter_mut()
                                .zip(&gdat[base..base + hw])
                                .zip(&xdat[base..base + hw])
                            {
                                let xhat = (xv - mu[di]) * inv_sigma[di];
                                *dst += scale * (gv - mg - xhat * mgx);
                            }
                        } else {
                            for (dst, &gv) in
                                acc.data_mut()[base..base + hw].iter_mut().zip(&gdat[base..base + hw])
                            {
                                *dst += scale * gv;
                            }
                        }
                    }
                }
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::testutil::{rand_tensor_in, scalarize};
    use crate::tensor::Tensor;

    const EPS: f64 = 1e-5;

    #[test]
    fn zero_variance_channels_normalize_to_zero() {
        let tape = Tape::new();
        // Channel 0 constant 3, channel 1 constant -7.
        let mut x = Tensor::zeros(&[2, 2, 2, 2]);
        for b in 0..2 {
            for p in 0..4 {
                x.data_mut()[(b * 2) * 4 + p] = 3.0;
                x.data_mut()[(b * 2 + 1) * 4 + p] = -7.0;
            }
        }
        let vx = tape.constant(x);
        let gamma = tape.constant(Tensor::full(&[2], 1.0));
        let beta = tape.constant(Tensor::zeros(&[2]));
        let mut st = BnState::new(2);
        let out = tape.value(
            batchnorm(&tape, vx, gamma, beta, &mut st, 0.9, EPS, Mode::Train).unwrap(),
        );
        assert_eq!(out, Tensor::zeros(&[2, 2, 2, 2]));
    }

    #[test]
    fn zero_gamma_yields_beta_everywhere() {
        let tape = Tape::new();
        let vx = tape.constant(rand_tensor_in(101, &[2, 3, 2, 2], -2.0, 2.0));
        let gamma = tape.constant(Tensor::zeros(&[3]));
        let beta = tape.constant(Tensor::full(&[3], 4.5));
        let mut st = BnState::new(3);
        let out = tape.value(
            batchnorm(&tape, vx, gamma, beta, &mut st, 0.9, EPS, Mode::Train).unwrap(),
        );
        assert_eq!(out, Tensor::full(&[2, 3, 2, 2], 4.5));
    }

    #[test]
    fn train_mode_output_has_zero_mean_unit_variance() {
        let tape = Tape::new();
        // Spread the input so eps is negligible against the batch variance.
        let vx = tape.constant(rand_tensor_in(102, &[4, 3, 5, 5], -30.0, 30.0));
        let gamma = tape.constant(Tensor::full(&[3], 1.0));
        let beta = tape.constant(Tensor::zeros(&[3]));
        let mut st = BnState::new(3);
        let out = tape.value(
            batchnorm(&tape, vx, gamma, beta, &mut st, 0.9, EPS, Mode::Train).unwrap(),
        );
        let n = 4 * 5 * 5;
        for c in 0..3 {
            let mut mean = 0.0;
            let mut sq = 0.0;
            for b in 0..4 {
                for p in 0..25 {
                    let v = out.data()[(b * 3 + c) * 25 + p];
                    mean += v;
                    sq += v * v;
                }
            }
            mean /= n as f64;
            let var = sq / n as f64 - mean * mean;
            assert!(mean.abs() < 1e-10, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let tape = Tape::new();
        let x = rand_tensor_in(103, &[2, 2, 3, 3], -1.0, 1.0);
        // Batch moments computed independently, biased variance.
        let n = 2 * 9;
        let mut bmu = vec![0.0; 2];
        let mut bvar = vec![0.0; 2];
        for c in 0..2 {
            for b in 0..2 {
                for p in 0..9 {
                    bmu[c] += x.data()[(b * 2 + c) * 9 + p];
                }
            }
            bmu[c] /= n as f64;
            for b in 0..2 {
                for p in 0..9 {
                    let d = x.data()[(b * 2 + c) * 9 + p] - bmu[c];
                    bvar[c] += d * d;
                }
            }
            bvar[c] /= n as f64;
        }
        let vx = tape.constant(x);
        let gamma = tape.constant(Tensor::full(&[2], 1.0));
        let beta = tape.constant(Tensor::zeros(&[2]));
        let mut st = BnState::new(2);
        st.mean = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        st.var = Tensor::new(&[2], vec![2.0, 3.0]).unwrap();
        batchnorm(&tape, vx, gamma, beta, &mut st, 0.9, EPS, Mode::Train).unwrap();
        for c in 0..2 {
            let want_mean = 0.9 * if c == 0 { 0.5 } else { -0.5 } + 0.1 * bmu[c];
            let want_var = 0.9 * if c == 0 { 2.0 } else { 3.0 } + 0.1 * bvar[c];
            assert!((st.mean.data()[c] - want_mean).abs() < 1e-12);
            assert!((st.var.data()[c] - want_var).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats_and_leaves_them_alone() {
        let tape = Tape::new();
        let x = Tensor::full(&[1, 1, 2, 2], 5.0);
        let vx = tape.constant(x);
        let gamma = tape.constant(Tensor::full(&[1], 2.0));
        let beta = tape.constant(Tensor::full(&[1], 1.0));
        let mut st = BnState::new(1);
        st.mean = Tensor::new(&[1], vec![3.0]).unwrap();
        st.var = Tensor::new(&[1], vec![4.0]).unwrap();
        let before = st.clone();
        let out = tape.value(
            batchnorm(&tape, vx, gamma, beta, &mut st, 0.9, EPS, Mode::Eval).unwrap(),
        );
        // (5-3)/sqrt(4+eps)*2 + 1
        let want = (5.0 - 3.0) / (4.0f64 + EPS).sqrt() * 2.0 + 1.0;
        assert!(out.data().iter().all(|&v| (v - want).abs() < 1e-12));
        assert_eq!(st, before);
    }

    #[test]
    fn gradcheck_batchnorm_both_modes() {
        for trial in 0..3u64 {
            let x = rand_tensor_in(1300 + trial, &[2, 2, 3, 3], -1.0, 1.0);
            let gamma = rand_tensor_in(1310 + trial, &[2], 0.5, 1.5);
            let beta = rand_tensor_in(1320 + trial, &[2], -0.5, 0.5);
            let rep = gradcheck(
                |t, xs| {
                    let mut st = BnState::new(2);
                    scalarize(
                        t,
                        batchnorm(t, xs[0], xs[1], xs[2], &mut st, 0.9, EPS, Mode::Train)?,
                        7,
                    )
                },
                &[x.clone(), gamma.clone(), beta.clone()],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "train trial {trial}: {rep}");
            let rep = gradcheck(
                |t, xs| {
                    let mut st = BnState::new(2);
                    st.mean = Tensor::new(&[2], vec![0.2, -0.1]).unwrap();
                    st.var = Tensor::new(&[2], vec![1.5, 0.7]).unwrap();
                    scalarize(
                        t,
                        batchnorm(t, xs[0], xs[1], xs[2], &mut st, 0.9, EPS, Mode::Eval)?,
                        7,
                    )
                },
                &[x, gamma, beta],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "eval trial {trial}: {rep}");
        }
    }
}
