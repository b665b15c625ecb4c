//! Structural ops: views, concatenation, batch splitting, channel gating.

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Same data, new dims (element count must match).
pub fn reshape(tape: &Tape, x: Var, dims: &[usize]) -> Result<Var> {
    let value = tape.with_value(x, |t| t.reshaped(dims))?;
    let xi = x.id;
    Ok(tape.push(
        value,
        tape.needs_grad(x),
        Box::new(move |vals, g, store| {
            if store.wants_id(xi) {
                let acc = store.accum(xi, vals[xi].dims());
                for (dst, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *dst += gv;
                }
            }
        }),
    ))
}

/// Concatenate along the channel axis: k tensors [B,D_i,H,J] -> [B,ΣD_i,H,J].
pub fn concat_channels(tape: &Tape, xs: &[Var]) -> Result<Var> {
    if xs.is_empty() {
        return Err(shape_err("concat_channels", "empty input list"));
    }
    let dims: Vec<Vec<usize>> = xs.iter().map(|&v| tape.dims(v)).collect();
    for d in &dims {
        if d.len() != 4 || d[0] != dims[0][0] || d[2] != dims[0][2] || d[3] != dims[0][3] {
            return Err(shape_err(
                "concat_channels",
                format!("incompatible dims {:?} vs {:?}", d, dims[0]),
            ));
        }
    }
    let (b, h, j) = (dims[0][0], dims[0][2], dims[0][3]);
    let total_c: usize = dims.iter().map(|d| d[1]).sum();
    let hw = h * j;
    let mut out = Tensor::zeros(&[b, total_c, h, j]);
    let mut c_off = 0;
    for (&v, d) in xs.iter().zip(&dims) {
        let c = d[1];
        tape.with_value(v, |t| {
            for bi in 0..b {
                let src = &t.data()[bi * c * hw..(bi + 1) * c * hw];
                let dst_start = (bi * total_c + c_off) * hw;
                out.data_mut()[dst_start..dst_start + c * hw].copy_from_slice(src);
            }
        });
        c_off += c;
    }
    let needs = xs.iter().any(|&v| tape.needs_grad(v));
    let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
    let channels: Vec<usize> = dims.iter().map(|d| d[1]).collect();
    Ok(tape.push(
        out,
        needs,
        Box::new(move |vals, g, store| {
            let mut c_off = 0;
            for (&id, &c) in ids.iter().zip(&channels) {
                if store.wants_id(id) {
                    let acc = store.accum(id, vals[id].dims());
                    for bi in 0..b {
                        let src_start = (bi * total_c + c_off) * hw;
                        let dst = &mut acc.data_mut()[bi * c * hw..(bi + 1) * c * hw];
                        for (v, &gv) in dst.iter_mut().zip(&g.data()[src_start..src_start + c * hw]) {
                            *v += gv;
                        }
                    }
                }
                c_off += c;
            }
        }),
    ))
}

/// Extract batch item b: [B, rest..] -> [rest..].
pub fn batch_item(tape: &Tape, x: Var, b: usize) -> Result<Var> {
    let (value, stride, batch) = tape.with_value(x, |t| -> Result<(Tensor, usize, usize)> {
        let d = t.dims();
        if d.is_empty() || b >= d[0] {
            return Err(shape_err("batch_item", format!("item {} of dims {:?}", b, d)));
        }
        let stride: usize = d[1..].iter().product();
        let data = t.data()[b * stride..(b + 1) * stride].to_vec();
        Ok((Tensor::new(&d[1..], data)?, stride, d[0]))
    })?;
    let _ = batch;
    let xi = x.id;
    Ok(tape.push(
        value,
        tape.needs_grad(x),
        Box::new(move |vals, g, store| {
            if store.wants_id(xi) {
                let acc = store.accum(xi, vals[xi].dims());
                for (dst, &gv) in acc.data_mut()[b * stride..(b + 1) * stride].iter_mut().zip(g.data()) {
                    *dst += gv;
                }
            }
        }),
    ))
}

/// Stack k same-dims tensors into a new leading axis.
pub fn stack(tape: &Tape, xs: &[Var]) -> Result<Var> {
    if xs.is_empty() {
        return Err(shape_err("stack", "empty input list"));
    }
    let d0 = tape.dims(xs[0]);
    let stride: usize = d0.iter().product();
    let mut dims = vec![xs.len()];
    dims.extend_from_slice(&d0);
    let mut out = Tensor::zeros(&dims);
    for (i, &v) in xs.iter().enumerate() {
        let d = tape.dims(v);
        if d != d0 {
            return Err(shape_err("stack", format!("dims {:?} vs {:?}", d, d0)));
        }
        tape.with_value(v, |t| {
            out.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(t.data());
        });
    }
    let needs = xs.iter().any(|&v| tape.needs_grad(v));
    let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
    Ok(tape.push(
        out,
        needs,
        Box::new(move |vals, g, store| {
            for (i, &id) in ids.iter().enumerate() {
                if store.wants_id(id) {
                    let acc = store.accum(id, vals[id].dims());
                    for (dst, &gv) in acc.data_mut().iter_mut().zip(&g.data()[i * stride..(i + 1) * stride]) {
                        *dst += gv;
                    }
                }
            }
        }),
    ))
}

/// Per-channel gating: out[b,d,·,·] = s[b,d] · x[b,d,·,·].
pub fn broadcast_mul_channel(tape: &Tape, x: Var, s: Var) -> Result<Var> {
    let value = tape.with_two(x, s, |tx, ts| -> Result<Tensor> {
        let (dx, ds) = (tx.dims(), ts.dims());
        if dx.len() != 4 || ds.len() != 2 || dx[0] != ds[0] || dx[1] != ds[1] {
            return Err(shape_err(
                "broadcast_mul_channel",
                format!("x {:?} vs s {:?}", dx, ds),
            ));
        }
        let hw = dx[2] * dx[3];
        let mut out = Tensor::zeros(dx);
        for (i, &sv) in ts.data().iter().enumerate() {
            for (o, &v) in out.data_mut()[i * hw..(i + 1) * hw]
                .iter_mut()
                .zip(&tx.data()[i * hw..(i + 1) * hw])
            {
                *o = sv * v;
            }
        }
        Ok(out)
    })?;
    let needs = tape.needs_grad(x) || tape.needs_grad(s);
    let (xi, si) = (x.id, s.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            let dx = vals[xi].dims().to_vec();
            let hw = dx[2] * dx[3];
            if store.wants_id(xi) {
                let acc = store.accum(xi, &dx);
                for (i, &sv) in vals[si].data().iter().enumerate() {
                    for (dst, &gv) in acc.data_mut()[i * hw..(i + 1) * hw]
                        .iter_mut()
                        .zip(&g.data()[i * hw..(i + 1) * hw])
                    {
                        *dst += sv * gv;
                    }
                }
            }
            if store.wants_id(si) {
                let acc = store.accum(si, vals[si].dims());
                for (i, dst) in acc.data_mut().iter_mut().enumerate() {
                    let dot: f64 = vals[xi].data()[i * hw..(i + 1) * hw]
                        .iter()
                        .zip(&g.data()[i * hw..(i + 1) * hw])
                        .map(|(&v, &gv)| v * gv)
                        .sum();
                    *dst += dot;
                }
            }
        }),
    ))
}
