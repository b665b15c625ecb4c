//! Matrix products on the tape.

use super::mm::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// [M,K] · [K,N] -> [M,N]
pub fn matmul(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (value, m, k, n) = tape.with_two(a, b, |ta, tb| -> Result<(Tensor, usize, usize, usize)> {
        let (da, db) = (ta.dims(), tb.dims());
        if da.len() != 2 || db.len() != 2 || da[1] != db[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", da, db)));
        }
        let (m, k, n) = (da[0], da[1], db[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(ta.data(), tb.data(), out.data_mut(), m, k, n);
        Ok((out, m, k, n))
    })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                gemm_nt(g.data(), vals[bi].data(), acc.data_mut(), m, n, k);
            }
            if store.wants_id(bi) {
                let acc = store.accum(bi, vals[bi].dims());
                gemm_tn(vals[ai].data(), g.data(), acc.data_mut(), k, m, n);
            }
        }),
    ))
}

/// [M,K] · [N,K]ᵀ -> [M,N]
pub fn matmul_nt(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (value, m, k, n) = tape.with_two(a, b, |ta, tb| -> Result<(Tensor, usize, usize, usize)> {
        let (da, db) = (ta.dims(), tb.dims());
        if da.len() != 2 || db.len() != 2 || da[1] != db[1] {
            return Err(shape_err("matmul_nt", format!("{:?} x {:?}ᵀ", da, db)));
        }
        let (m, k, n) = (da[0], da[1], db[0]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nt(ta.data(), tb.data(), out.data_mut(), m, k, n);
        Ok((out, m, k, n))
    })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                gemm_nn(g.data(), vals[bi].data(), acc.data_mut(), m, n, k);
            }
            if store.wants_id(bi) {
                let acc = store.accum(bi, vals[bi].dims());
                gemm_tn(g.data(), vals[ai].data(), acc.data_mut(), n, m, k);
            }
        }),
    ))
}

/// Batched a·aᵀ-style product: [B,M,K] · [B,N,K]ᵀ -> [B,M,N]. `a` and `b` may
/// be the same var (covariance); gradients accumulate for both uses.
pub fn batch_matmul_nt(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (value, bsz, m, k, n) =
        tape.with_two(a, b, |ta, tb| -> Result<(Tensor, usize, usize, usize, usize)> {
            let (da, db) = (ta.dims(), tb.dims());
            if da.len() != 3 || db.len() != 3 || da[0] != db[0] || da[2] != db[2] {
                return Err(shape_err("batch_matmul_nt", format!("{:?} x {:?}ᵀ", da, db)));
            }
            let (bsz, m, k, n) = (da[0], da[1], da[2], db[1]);
            let mut out = Tensor::zeros(&[bsz, m, n]);
            for i in 0..bsz {
                gemm_nt(
                    &ta.data()[i * m * k..(i + 1) * m * k],
                    &tb.data()[i * n * k..(i + 1) * n * k],
                    &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Ok((out, bsz, m, k, n))
        })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for i in 0..bsz {
                    gemm_nn(
                        &g.data()[i * m * n..(i + 1) * m * n],
                        &vals[bi].data()[i * n * k..(i + 1) * n * k],
                        &mut acc.data_mut()[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            if store.wants_id(bi) {
                let acc = store.accum(bi, vals[bi].dims());
                for i in 0..bsz {
                    gemm_tn(
                        &g.data()[i * m * n..(i + 1) * m * n],
                        &vals[ai].data()[i * m * k..(i + 1) * m * k],
                        &mut acc.data_mut()[i * n * k..(i + 1) * n * k],
                        n,
                        m,
                        k,
                    );
                }
            }
        }),
    ))
}

/// Fully connected layer: x[B,In] · w[Out,In]ᵀ (+ bias) -> [B,Out].
pub fn linear(tape: &Tape, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let (value, bsz, fin, fout) =
        tape.with_two(x, w, |tx, tw| -> Result<(Tensor, usize, usize, usize)> {
            let (dx, dw) = (tx.dims(), tw.dims());
            if dx.len() != 2 || dw.len() != 2 || dx[1] != dw[1] {
                return Err(shape_err("linear", format!("x {:?}, w {:?}", dx, dw)));
            }
            let (bsz, fin, fout) = (dx[0], dx[1], dw[0]);
            let mut out = Tensor::zeros(&[bsz, fout]);
            gemm_nt(tx.data(), tw.data(), out.data_mut(), bsz, fin, fout);
            Ok((out, bsz, fin, fout))
        })?;
    let mut value = value;
    if let Some(bv) = bias {
        tape.with_value(bv, |tb| -> Result<()> {
            if tb.dims() != [fout] {
                return Err(shape_err("linear", format!("bias {:?}, want [{}]", tb.dims(), fout)));
            }
            for row in value.data_mut().chunks_mut(fout) {
                for (o, &b) in row.iter_mut().zip(tb.data()) {
                    *o += b;
                }
            }
            Ok(())
        })?;
    }
    let needs = tape.needs_grad(x)
        || tape.needs_grad(w)
        || bias.map(|b| tape.needs_grad(b)).unwrap_or(false);
    let (xi, wi) = (x.id, w.id);
    let bias_id = bias.map(|b| b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            if store.wants_id(xi) {
                let acc = store.accum(xi, vals[xi].dims());
                gemm_nn(g.data(), vals[wi].data(), acc.data_mut(), bsz, fout, fin);
            }
            if store.wants_id(wi) {
                let acc = store.accum(wi, vals[wi].dims());
                gemm_tn(g.data(), vals[xi].data(), acc.data_mut(), fout, bsz, fin);
            }
            if let Some(bid) = bias_id {
                if store.wants_id(bid) {
                    let acc = store.accum(bid, vals[bid].dims());
                    for row in g.data().chunks(fout) {
                        for (dst, &gv) in acc.data_mut().iter_mut().zip(row) {
                            *dst += gv;
                        }
                    }
                }
            }
        }),
    ))
}
