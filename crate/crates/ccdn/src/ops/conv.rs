//! Convolution, transposed convolution, pooling, and nearest upsampling.
//! All three convolution directions reduce to im2col/col2im plus a GEMM.

use super::mm::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, k: usize, s: usize, p: usize) -> Result<Self> {
        if h + 2 * p < k || w + 2 * p < k {
            return Err(shape_err("conv-geometry", format!("{}x{} too small for k={}", h, w, k)));
        }
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        Ok(Self { c, h, w, k, s, p, ho, wo })
    }

    fn cols_len(&self) -> usize {
        self.c * self.k * self.k * self.ho * self.wo
    }
}

/// src[C,H,W] -> cols[C·k·k, Ho·Wo], zero padding.
fn im2col(src: &[f64], g: Geom, cols: &mut [f64]) {
    let n = g.ho * g.wo;
    debug_assert_eq!(cols.len(), g.c * g.k * g.k * n);
    let mut row = 0;
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut cols[row * n..(row + 1) * n];
                row += 1;
                for oy in 0..g.ho {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add cols back into dst[C,H,W].
fn col2im(cols: &[f64], g: Geom, dst: &mut [f64]) {
    let n = g.ho * g.wo;
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &cols[row * n..(row + 1) * n];
                row += 1;
                for oy in 0..g.ho {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            prow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// conv2d: x[B,Cin,H,W] * w[Cout,Cin,k,k] -> [B,Cout,Ho,Wo].
/// Kernels 1x1 or 3x3, stride 1 or 2, same padding (k/2).
pub fn conv2d(tape: &Tape, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
    let (geom, cout) = tape.with_two(x, w, |tx, tw| -> Result<(Geom, usize)> {
        let (dx, dw) = (tx.dims(), tw.dims());
        if dx.len() != 4 || dw.len() != 4 || dw[2] != dw[3] {
            return Err(shape_err("conv2d", format!("x {:?}, w {:?}", dx, dw)));
        }
        let k = dw[2];
        if k != 1 && k != 3 {
            return Err(shape_err("conv2d", format!("unsupported kernel {}x{}", k, k)));
        }
        if stride != 1 && stride != 2 {
            return Err(shape_err("conv2d", format!("unsupported stride {}", stride)));
        }
        if dw[1] != dx[1] {
            return Err(shape_err("conv2d", format!("x channels {} vs w {}", dx[1], dw[1])));
        }
        Ok((Geom::new(dx[1], dx[2], dx[3], k, stride, k / 2)?, dw[0]))
    })?;
    if let Some(bv) = bias {
        let bd = tape.dims(bv);
        if bd != [cout] {
            return Err(shape_err("conv2d", format!("bias {:?}, want [{}]", bd, cout)));
        }
    }
    let bsz = tape.dims(x)[0];
    let kk = geom.c * geom.k * geom.k;
    let n = geom.ho * geom.wo;

    let value = tape.with_two(x, w, |tx, tw| {
        let mut out = Tensor::zeros(&[bsz, cout, geom.ho, geom.wo]);
        let mut cols = vec![0.0; geom.cols_len()];
        let in_stride = geom.c * geom.h * geom.w;
        for b in 0..bsz {
            im2col(&tx.data()[b * in_stride..(b + 1) * in_stride], geom, &mut cols);
            gemm_nn(
                tw.data(),
                &cols,
                &mut out.data_mut()[b * cout * n..(b + 1) * cout * n],
                cout,
                kk,
                n,
            );
        }
        out
    });
    let mut value = value;
    if let Some(bv) = bias {
        tape.with_value(bv, |tb| {
            for bo in value.data_mut().chunks_mut(cout * n) {
                for (co, &b) in tb.data().iter().enumerate() {
                    for v in &mut bo[co * n..(co + 1) * n] {
                        *v += b;
                    }
                }
            }
        });
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
            let in_stride = geom.c * geom.h * geom.w;
            let want_x = store.wants_id(xi);
            let want_w = store.wants_id(wi);
            if want_x || want_w {
                let mut cols = vec![0.0; geom.cols_len()];
                let mut dcols = vec![0.0; geom.cols_len()];
                let mut dw_acc = vec![0.0; cout * kk];
                let mut dx_acc = if want_x { vec![0.0; bsz * in_stride] } else { Vec::new() };
                for b in 0..bsz {
                    let gb = &g.data()[b * cout * n..(b + 1) * cout * n];
                    if want_w {
                        im2col(&vals[xi].data()[b * in_stride..(b + 1) * in_stride], geom, &mut cols);
                        gemm_nt(gb, &cols, &mut dw_acc, cout, n, kk);
                    }
                    if want_x {
                        dcols.fill(0.0);
                        gemm_tn(vals[wi].data(), gb, &mut dcols, kk, cout, n);
                        col2im(&dcols, geom, &mut dx_acc[b * in_stride..(b + 1) * in_stride]);
                    }
                }
                if want_w {
                    let acc = store.accum(wi, vals[wi].dims());
                    for (dst, &v) in acc.data_mut().iter_mut().zip(&dw_acc) {
                        *dst += v;
                    }
                }
                if want_x {
                    let acc = store.accum(xi, vals[xi].dims());
                    for (dst, &v) in acc.data_mut().iter_mut().zip(&dx_acc) {
                        *dst += v;
                    }
                }
            }
            if let Some(bid) = bias_id {
                if store.wants_id(bid) {
                    let acc = store.accum(bid, vals[bid].dims());
                    for bo in g.data().chunks(cout * n) {
                        for (co, dst) in acc.data_mut().iter_mut().enumerate() {
                            *dst += bo[co * n..(co + 1) * n].iter().sum::<f64>();
                        }
                    }
                }
            }
        }),
    ))
}

/// Transposed convolution, stride 2 only: x[B,Cin,H,W] * w[Cin,Cout,k,k]
/// -> [B,Cout,2H,2W]. Kernels 2x2 (pad 0) or 4x4 (pad 1).
pub fn deconv2d(tape: &Tape, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
    let (geom, cin, cout) = tape.with_two(x, w, |tx, tw| -> Result<(Geom, usize, usize)> {
        let (dx, dw) = (tx.dims(), tw.dims());
        if dx.len() != 4 || dw.len() != 4 || dw[2] != dw[3] {
            return Err(shape_err("deconv2d", format!("x {:?}, w {:?}", dx, dw)));
        }
        if stride != 2 {
            return Err(shape_err("deconv2d", format!("stride {} unsupported, only 2", stride)));
        }
        let k = dw[2];
        if k != 2 && k != 4 {
            return Err(shape_err("deconv2d", format!("unsupported kernel {}x{}", k, k)));
        }
        if dw[0] != dx[1] {
            return Err(shape_err("deconv2d", format!("x channels {} vs w {}", dx[1], dw[0])));
        }
        let (h, w_) = (dx[2], dx[3]);
        // Output geometry is the conv geometry read backwards: the "conv"
        // maps [Cout, 2H, 2W] down to [.., H, W].
        let g = Geom::new(dw[1], 2 * h, 2 * w_, k, 2, (k - 2) / 2)?;
        if g.ho != h || g.wo != w_ {
            return Err(shape_err("deconv2d", format!("geometry mismatch {}x{}", g.ho, g.wo)));
        }
        Ok((g, dx[1], dw[1]))
    })?;
    if let Some(bv) = bias {
        let bd = tape.dims(bv);
        if bd != [cout] {
            return Err(shape_err("deconv2d", format!("bias {:?}, want [{}]", bd, cout)));
        }
    }
    let bsz = tape.dims(x)[0];
    let kk = cout * geom.k * geom.k;
    let n = geom.ho * geom.wo; // input spatial size
    let out_stride = cout * geom.h * geom.w;

    let mut value = tape.with_two(x, w, |tx, tw| {
        let mut out = Tensor::zeros(&[bsz, cout, geom.h, geom.w]);
        let mut cols = vec![0.0; kk * n];
        let in_stride = cin * n;
        for b in 0..bsz {
            cols.fill(0.0);
            gemm_tn(
                tw.data(),
                &tx.data()[b * in_stride..(b + 1) * in_stride],
                &mut cols,
                kk,
                cin,
                n,
            );
            col2im(&cols, geom, &mut out.data_mut()[b * out_stride..(b + 1) * out_stride]);
        }
        out
    });
    if let Some(bv) = bias {
        tape.with_value(bv, |tb| {
            let hw = geom.h * geom.w;
            for bo in value.data_mut().chunks_mut(out_stride) {
                for (co, &b) in tb.data().iter().enumerate() {
                    for v in &mut bo[co * hw..(co + 1) * hw] {
                        *v += b;
                    }
                }
            }
        });
    }

    let needs = tape.needs_grad(x)
        || tape.needs_grad(w)
        || bias.map(|b| tape.needs_grad(b)).unwrap_or(false);
    let (xi, wi) = (x.id, w.id);
    let bias_id = bias.map(|b| b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g_out, store| {
            let in_stride = cin * n;
            let want_x = store.wants_id(xi);
            let want_w = store.wants_id(wi);
            if want_x || want_w {
                let mut cols = vec![0.0; kk * n];
                let mut dw_acc = vec![0.0; cin * kk];
                let mut dx_acc = if want_x { vec![0.0; bsz * in_stride] } else { Vec::new() };
                for b in 0..bsz {
                    im2col(&g_out.data()[b * out_stride..(b + 1) * out_stride], geom, &mut cols);
                    if want_x {
                        gemm_nn(
                            vals[wi].data(),
                            &cols,
                            &mut dx_acc[b * in_stride..(b + 1) * in_stride],
                            cin,
                            kk,
                            n,
                        );
                    }
                    if want_w {
                        gemm_nt(
                            &vals[xi].data()[b * in_stride..(b + 1) * in_stride],
                            &cols,
                            &mut dw_acc,
                            cin,
                            n,
                            kk,
                        );
                    }
                }
                if want_w {
                    let acc = store.accum(wi, vals[wi].dims());
                    for (dst, &v) in acc.data_mut().iter_mut().zip(&dw_acc) {
                        *dst += v;
                    }
                }
                if want_x {
                    let acc = store.accum(xi, vals[xi].dims());
                    for (dst, &v) in acc.data_mut().iter_mut().zip(&dx_acc) {
                        *dst += v;
                    }
                }
            }
            if let Some(bid) = bias_id {
                if store.wants_id(bid) {
                    let hw = geom.h * geom.w;
                    let acc = store.accum(bid, vals[bid].dims());
                    for bo in g_out.data().chunks(out_stride) {
                        for (co, dst) in acc.data_mut().iter_mut().enumerate() {
                            *dst += bo[co * hw..(co + 1) * hw].iter().sum::<f64>();
                        }
                    }
                }
            }
        }),
    ))
}

/// 2x2 average pooling with stride 2; spatial dims must be even.
pub fn avgpool2(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 4 || d[2] % 2 != 0 || d[3] % 2 != 0 {
            return Err(shape_err("avgpool2", format!("want even [B,D,H,J], got {:?}", d)));
        }
        let (planes, h, w) = (d[0] * d[1], d[2], d[3]);
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[d[0], d[1], ho, wo]);
        for pl in 0..planes {
            let src = &t.data()[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out.data_mut()[pl * ho * wo..(pl + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = 2 * oy * w + 2 * ox;
                    dst[oy * wo + ox] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
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
                let d = vals[xi].dims().to_vec();
                let (planes, h, w) = (d[0] * d[1], d[2], d[3]);
                let (ho, wo) = (h / 2, w / 2);
                let acc = store.accum(xi, &d);
                for pl in 0..planes {
                    let gsl = &g.data()[pl * ho * wo..(pl + 1) * ho * wo];
                    let dst = &mut acc.data_mut()[pl * h * w..(pl + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = 0.25 * gsl[oy * wo + ox];
                            let base = 2 * oy * w + 2 * ox;
                            dst[base] += gv;
                            dst[base + 1] += gv;
                            dst[base + w] += gv;
                            dst[base + w + 1] += gv;
                        }
                    }
                }
            }
        }),
    ))
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 4 {
            return Err(shape_err("upsample2", format!("want [B,D,H,J], got {:?}", d)));
        }
        let (planes, h, w) = (d[0] * d[1], d[2], d[3]);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[d[0], d[1], ho, wo]);
        for pl in 0..planes {
            let src = &t.data()[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out.data_mut()[pl * ho * wo..(pl + 1) * ho * wo];
            for oy in 0..ho {
                let srow = &src[(oy / 2) * w..(oy / 2 + 1) * w];
                let drow = &mut dst[oy * wo..(oy + 1) * wo];
                for (ox, v) in drow.iter_mut().enumerate() {
                    *v = srow[ox / 2];
                }
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
                let d = vals[xi].dims().to_vec();
                let (planes, h, w) = (d[0] * d[1], d[2], d[3]);
                let wo = 2 * w;
                let acc = store.accum(xi, &d);
                for pl in 0..planes {
                    let gsl = &g.data()[pl * 4 * h * w..(pl + 1) * 4 * h * w];
                    let dst = &mut acc.data_mut()[pl * h * w..(pl + 1) * h * w];
                    for oy in 0..2 * h {
                        let drow = &mut dst[(oy / 2) * w..(oy / 2 + 1) * w];
                        for (ox, &gv) in gsl[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            drow[ox / 2] += gv;
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
    use crate::ops::{add, scale};
    use crate::testutil::{rand_tensor, scalarize};
    use crate::tensor::{idx4, Tensor};

    /// Direct nested-sum cross-correlation, the reference for conv2d.
    fn naive_conv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize) -> Tensor {
        let (b, ci, h, j) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let (co, k) = (w.dims()[0], w.dims()[2]);
        let pad = k / 2;
        let ho = (h + 2 * pad - k) / stride + 1;
        let jo = (j + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[b, co, ho, jo]);
        for bi in 0..b {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..jo {
                        let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < j
                                    {
                                        acc += x.data()
                                            [idx4(x.dims(), bi, c, iy as usize, ix as usize)]
                                            * w.data()[((o * ci + c) * k + ky as usize) * k + kx];
                                    }
                                }
                            }
                        }
                        let oi = idx4(out.dims(), bi, o, oy, ox);
                        out.data_mut()[oi] = acc;
                    }
                }
            }
        }
        out
    }

    /// Scatter-form transposed convolution, the reference for deconv2d.
    /// Kernel layout [C_in, C_out, k, k], pad (k-2)/2, stride 2.
    fn naive_deconv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
        let (b, ci, h, j) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let (co, k) = (w.dims()[1], w.dims()[2]);
        let pad = (k - 2) / 2;
        let (ho, jo) = (2 * h, 2 * j);
        let mut out = Tensor::zeros(&[b, co, ho, jo]);
        if let Some(t) = bias {
            for bi in 0..b {
                for o in 0..co {
                    for p in 0..ho * jo {
                        out.data_mut()[(bi * co + o) * ho * jo + p] = t.data()[o];
                    }
                }
            }
        }
        for bi in 0..b {
            for c in 0..ci {
                for iy in 0..h {
                    for ix in 0..j {
                        let v = x.data()[idx4(x.dims(), bi, c, iy, ix)];
                        for o in 0..co {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let oy = (iy * 2 + ky) as isize - pad as isize;
                                    let ox = (ix * 2 + kx) as isize - pad as isize;
                                    if oy >= 0
                                        && ox >= 0
                                        && (oy as usize) < ho
                                        && (ox as usize) < jo
                                    {
                                        let oi =
                                            idx4(out.dims(), bi, o, oy as usize, ox as usize);
                                        out.data_mut()[oi] +=
                                            v * w.data()[((c * co + o) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn run_conv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize) -> Tensor {
        let tape = Tape::new();
        let vx = tape.constant(x.clone());
        let vw = tape.constant(w.clone());
        let vb = bias.map(|t| tape.constant(t.clone()));
        tape.value(conv2d(&tape, vx, vw, vb, stride).unwrap())
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = rand_tensor(61, &[2, 3, 4, 4]);
        // 1x1 kernel, 1.0 where output channel equals input channel.
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let out = run_conv(&x, &w, None, 1);
        assert_eq!(out, x);
    }

    #[test]
    fn all_ones_kernel_counts_overlap() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let out = run_conv(&x, &w, None, 1);
        // Padded 3x3 window over a 3x3 map of ones: 9 in the center,
        // 6 on edges, 4 in corners.
        let want = Tensor::new(&[1, 1, 3, 3], vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0])
            .unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let cases = [(3usize, 1usize), (3, 2), (1, 1), (1, 2)];
        for (i, &(k, stride)) in cases.iter().enumerate() {
            let x = rand_tensor(62 + i as u64, &[2, 3, 6, 5]);
            let w = rand_tensor(72 + i as u64, &[4, 3, k, k]);
            let bias = rand_tensor(82 + i as u64, &[4]);
            let got = run_conv(&x, &w, Some(&bias), stride);
            let want = naive_conv(&x, &w, Some(&bias), stride);
            assert_eq!(got.dims(), want.dims(), "k={k} stride={stride}");
            assert!(got.max_abs_diff(&want) < 1e-12, "k={k} stride={stride}");
        }
    }

    #[test]
    fn conv_is_linear_in_input() {
        let x = rand_tensor(90, &[1, 2, 5, 5]);
        let y = rand_tensor(91, &[1, 2, 5, 5]);
        let w = rand_tensor(92, &[3, 2, 3, 3]);
        let (a, b) = (1.7, -0.4);
        let tape = Tape::new();
        let (vx, vy, vw) =
            (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(w.clone()));
        let mix = add(&tape, scale(&tape, vx, a).unwrap(), scale(&tape, vy, b).unwrap()).unwrap();
        let lhs = tape.value(conv2d(&tape, mix, vw, None, 1).unwrap());
        let cx = conv2d(&tape, vx, vw, None, 1).unwrap();
        let cy = conv2d(&tape, vy, vw, None, 1).unwrap();
        let rhs =
            tape.value(add(&tape, scale(&tape, cx, a).unwrap(), scale(&tape, cy, b).unwrap()).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[2, 4, 3, 3]));
        assert!(conv2d(&tape, x, w, None, 1).is_err());
    }

    #[test]
    fn deconv_scatters_single_input() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1], 3.25));
        let w = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let out = tape.value(deconv2d(&tape, x, w, None, 2).unwrap());
        assert_eq!(out, Tensor::full(&[1, 1, 2, 2], 3.25));
    }

    #[test]
    fn deconv_of_zero_is_zero_and_stride_is_pinned() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let w = tape.constant(rand_tensor(93, &[2, 2, 2, 2]));
        let out = tape.value(deconv2d(&tape, x, w, None, 2).unwrap());
        assert_eq!(out, Tensor::zeros(&[1, 2, 6, 6]));
        assert!(deconv2d(&tape, x, w, None, 1).is_err());
        assert!(deconv2d(&tape, x, w, None, 3).is_err());
    }

    #[test]
    fn deconv_matches_scatter_oracle() {
        for (i, &k) in [2usize, 4].iter().enumerate() {
            let x = rand_tensor(94 + i as u64, &[2, 3, 3, 4]);
            let w = rand_tensor(96 + i as u64, &[3, 2, k, k]);
            let bias = rand_tensor(98 + i as u64, &[2]);
            let tape = Tape::new();
            let vx = tape.constant(x.clone());
            let vw = tape.constant(w.clone());
            let vb = tape.constant(bias.clone());
            let got = tape.value(deconv2d(&tape, vx, vw, Some(vb), 2).unwrap());
            let want = naive_deconv(&x, &w, Some(&bias));
            assert_eq!(got.dims(), want.dims(), "k={k}");
            assert!(got.max_abs_diff(&want) < 1e-12, "k={k}");
        }
    }

    #[test]
    fn avgpool_halves_and_averages() {
        let tape = Tape::new();
        let x = tape.constant(
            Tensor::new(&[1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap(),
        );
        let out = tape.value(avgpool2(&tape, x).unwrap());
        assert_eq!(out, Tensor::new(&[1, 1, 1, 2], vec![3.5, 5.5]).unwrap());
    }

    #[test]
    fn upsample_repeats_each_pixel() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let out = tape.value(upsample2(&tape, x).unwrap());
        assert_eq!(
            out,
            Tensor::new(&[1, 1, 2, 4], vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]).unwrap()
        );
    }

    #[test]
    fn gradcheck_conv_and_pooling() {
        for trial in 0..3u64 {
            let x = rand_tensor(1100 + trial, &[2, 2, 4, 4]);
            let w3 = rand_tensor(1110 + trial, &[3, 2, 3, 3]);
            let bias = rand_tensor(1120 + trial, &[3]);
            for stride in [1usize, 2] {
                let rep = gradcheck(
                    move |t, xs| scalarize(t, conv2d(t, xs[0], xs[1], Some(xs[2]), stride)?, 7),
                    &[x.clone(), w3.clone(), bias.clone()],
                    1e-5,
                    1e-4,
                )
                .unwrap();
                assert!(rep.pass, "conv2d k3 s{stride} trial {trial}: {rep}");
            }
            let w1 = rand_tensor(1130 + trial, &[3, 2, 1, 1]);
            let rep = gradcheck(
                |t, xs| scalarize(t, conv2d(t, xs[0], xs[1], None, 1)?, 7),
                &[x.clone(), w1],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "conv2d k1 trial {trial}: {rep}");

            let rep = gradcheck(
                |t, xs| scalarize(t, avgpool2(t, xs[0])?, 7),
                &[x.clone()],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "avgpool2 trial {trial}: {rep}");
            let rep = gradcheck(
                |t, xs| scalarize(t, upsample2(t, xs[0])?, 7),
                &[x.clone()],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "upsample2 trial {trial}: {rep}");
        }
    }

    // The input gradient of a transposed convolution is the matching forward
    // convolution of the upstream gradient; central differences confirm it.
    #[test]
    fn gradcheck_deconv_adjoint_identity() {
        for (i, &k) in [2usize, 4].iter().enumerate() {
            let x = rand_tensor(1200 + i as u64, &[1, 2, 3, 3]);
            let w = rand_tensor(1210 + i as u64, &[2, 2, k, k]);
            let bias = rand_tensor(1220 + i as u64, &[2]);
            let rep = gradcheck(
                |t, xs| scalarize(t, deconv2d(t, xs[0], xs[1], Some(xs[2]), 2)?, 7),
                &[x, w, bias],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "deconv2d k{k}: {rep}");
        }
    }
}
