//! Elementwise and scalar-broadcast primitives.

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err(op, format!("dims {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn zip_new(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims(), data).expect("zip_new dims")
}

pub fn add(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let value = tape.with_two(a, b, |ta, tb| {
        same_dims("add", ta, tb)?;
        Ok::<_, crate::error::Error>(zip_new(ta, tb, |x, y| x + y))
    })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            for &id in &[ai, bi] {
                if store.wants_id(id) {
                    let acc = store.accum(id, vals[id].dims());
                    for (x, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *x += gv;
                    }
                }
            }
        }),
    ))
}

pub fn sub(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let value = tape.with_two(a, b, |ta, tb| {
        same_dims("sub", ta, tb)?;
        Ok::<_, crate::error::Error>(zip_new(ta, tb, |x, y| x - y))
    })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for (x, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *x += gv;
                }
            }
            if store.wants_id(bi) {
                let acc = store.accum(bi, vals[bi].dims());
                for (x, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *x -= gv;
                }
            }
        }),
    ))
}

pub fn mul(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let value = tape.with_two(a, b, |ta, tb| {
        same_dims("mul", ta, tb)?;
        Ok::<_, crate::error::Error>(zip_new(ta, tb, |x, y| x * y))
    })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for ((x, &gv), &ov) in acc.data_mut().iter_mut().zip(g.data()).zip(vals[bi].data()) {
                    *x += gv * ov;
                }
            }
            if store.wants_id(bi) {
                let acc = store.accum(bi, vals[bi].dims());
                for ((x, &gv), &ov) in acc.data_mut().iter_mut().zip(g.data()).zip(vals[ai].data()) {
                    *x += gv * ov;
                }
            }
        }),
    ))
}

pub fn scale(tape: &Tape, a: Var, c: f64) -> Result<Var> {
    let value = tape.with_value(a, |t| t.map(|v| v * c));
    let ai = a.id;
    Ok(tape.push(
        value,
        tape.needs_grad(a),
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for (x, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *x += c * gv;
                }
            }
        }),
    ))
}

pub fn square(tape: &Tape, a: Var) -> Result<Var> {
    let value = tape.with_value(a, |t| t.map(|v| v * v));
    let ai = a.id;
    Ok(tape.push(
        value,
        tape.needs_grad(a),
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for ((dst, &gv), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(vals[ai].data()) {
                    *dst += 2.0 * xv * gv;
                }
            }
        }),
    ))
}

/// Elementwise square root; every input entry must be positive.
pub fn sqrt(tape: &Tape, a: Var) -> Result<Var> {
    let value = tape.with_value(a, |t| -> Result<Tensor> {
        if t.data().iter().any(|&v| v <= 0.0) {
            return Err(crate::error::Error::Numerics("sqrt of non-positive entry".into()));
        }
        Ok(t.map(f64::sqrt))
    })?;
    let ai = a.id;
    let out_id = tape.len();
    Ok(tape.push(
        value,
        tape.needs_grad(a),
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for ((dst, &gv), &yv) in acc.data_mut().iter_mut().zip(g.data()).zip(vals[out_id].data()) {
                    *dst += gv / (2.0 * yv);
                }
            }
        }),
    ))
}

/// Elementwise max; ties send the gradient to `a`.
pub fn maximum(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let value = tape.with_two(a, b, |ta, tb| {
        same_dims("maximum", ta, tb)?;
        Ok::<_, crate::error::Error>(zip_new(ta, tb, f64::max))
    })?;
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            let pick_a: Vec<bool> = vals[ai]
                .data()
                .iter()
                .zip(vals[bi].data())
                .map(|(&x, &y)| x >= y)
                .collect();
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for ((dst, &gv), &p) in acc.data_mut().iter_mut().zip(g.data()).zip(&pick_a) {
                    if p {
                        *dst += gv;
                    }
                }
            }
            if store.wants_id(bi) {
                let acc = store.accum(bi, vals[bi].dims());
                for ((dst, &gv), &p) in acc.data_mut().iter_mut().zip(g.data()).zip(&pick_a) {
                    if !p {
                        *dst += gv;
                    }
                }
            }
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Sigmoid,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activate(tape: &Tape, a: Var, kind: Act) -> Result<Var> {
    let value = tape.with_value(a, |t| match kind {
        Act::Relu => t.map(|v| v.max(0.0)),
        Act::Sigmoid => t.map(sigmoid),
    });
    let ai = a.id;
    let out_id = tape.len();
    Ok(tape.push(
        value,
        tape.needs_grad(a),
        Box::new(move |vals, g, store| {
            if !store.wants_id(ai) {
                return;
            }
            match kind {
                Act::Relu => {
                    let acc = store.accum(ai, vals[ai].dims());
                    for ((dst, &gv), &xv) in acc.data_mut().iter_mut().zip(g.data()).zip(vals[ai].data()) {
                        if xv > 0.0 {
                            *dst += gv;
                        }
                    }
                }
                Act::Sigmoid => {
                    let acc = store.accum(ai, vals[ai].dims());
                    for ((dst, &gv), &yv) in acc.data_mut().iter_mut().zip(g.data()).zip(vals[out_id].data()) {
                        *dst += gv * yv * (1.0 - yv);
                    }
                }
            }
        }),
    ))
}

/// a / s with s a scalar var (gradients flow into both).
pub fn div_scalar_var(tape: &Tape, a: Var, s: Var) -> Result<Var> {
    let sv = tape.with_value(s, |t| t.item())?;
    if sv == 0.0 {
        return Err(crate::error::Error::Numerics("division by zero scalar".into()));
    }
    let value = tape.with_value(a, |t| t.map(|v| v / sv));
    let needs = tape.needs_grad(a) || tape.needs_grad(s);
    let (ai, si) = (a.id, s.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            let sval = vals[si].data()[0];
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for (dst, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *dst += gv / sval;
                }
            }
            if store.wants_id(si) {
                let dot: f64 = vals[ai].data().iter().zip(g.data()).map(|(&x, &gv)| x * gv).sum();
                let acc = store.accum(si, &[]);
                acc.data_mut()[0] -= dot / (sval * sval);
            }
        }),
    ))
}

/// a * s with s a scalar var.
pub fn mul_scalar_var(tape: &Tape, a: Var, s: Var) -> Result<Var> {
    let sv = tape.with_value(s, |t| t.item())?;
    let value = tape.with_value(a, |t| t.map(|v| v * sv));
    let needs = tape.needs_grad(a) || tape.needs_grad(s);
    let (ai, si) = (a.id, s.id);
    Ok(tape.push(
        value,
        needs,
        Box::new(move |vals, g, store| {
            let sval = vals[si].data()[0];
            if store.wants_id(ai) {
                let acc = store.accum(ai, vals[ai].dims());
                for (dst, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                    *dst += gv * sval;
                }
            }
            if store.wants_id(si) {
                let dot: f64 = vals[ai].data().iter().zip(g.data()).map(|(&x, &gv)| x * gv).sum();
                let acc = store.accum(si, &[]);
                acc.data_mut()[0] += dot;
            }
        }),
    ))
}

/// Scalar a / b (both scalar vars); used by the correlation-loss ratio.
pub fn div_scalars(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = tape.with_two(a, b, |ta, tb| -> Result<(f64, f64)> {
        Ok((ta.item()?, tb.item()?))
    })?;
    if bv == 0.0 {
        return Err(crate::error::Error::Numerics("division by zero scalar".into()));
    }
    let needs = tape.needs_grad(a) || tape.needs_grad(b);
    let (ai, bi) = (a.id, b.id);
    Ok(tape.push(
        Tensor::scalar(av / bv),
        needs,
        Box::new(move |vals, g, store| {
            let gv = g.data()[0];
            let (x, y) = (vals[ai].data()[0], vals[bi].data()[0]);
            if store.wants_id(ai) {
                store.accum(ai, &[]).data_mut()[0] += gv / y;
            }
            if store.wants_id(bi) {
                store.accum(bi, &[]).data_mut()[0] -= gv * x / (y * y);
            }
        }),
    ))
}
