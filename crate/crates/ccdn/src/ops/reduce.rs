//! Reductions, pooling to descriptors, and small structural extractions.

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub fn sum(tape: &Tape, a: Var) -> Result<Var> {
    let value = tape.with_value(a, |t| Tensor::scalar(t.data().iter().sum()));
    let ai = a.id;
    Ok(tape.push(
        value,
        tape.needs_grad(a),
        Box::new(move |vals, g, store| {
            if store.wants_id(ai) {
                let gv = g.data()[0];
                let acc = store.accum(ai, vals[ai].dims());
                for x in acc.data_mut() {
                    *x += gv;
                }
            }
        }),
    ))
}

pub fn mean(tape: &Tape, a: Var) -> Result<Var> {
    let n = tape.with_value(a, |t| t.len());
    if n == 0 {
        return Err(shape_err("mean", "empty tensor"));
    }
    let s = sum(tape, a)?;
    super::elem::scale(tape, s, 1.0 / n as f64)
}

/// Global average pooling: [B,D,H,J] -> [B,D].
pub fn gap(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 4 {
            return Err(shape_err("gap", format!("want [B,D,H,J], got {:?}", d)));
        }
        let (b, c, n) = (d[0], d[1], d[2] * d[3]);
        if n == 0 {
            return Err(shape_err("gap", "empty spatial dims"));
        }
        let mut out = Tensor::zeros(&[b, c]);
        for i in 0..b * c {
            let s: f64 = t.data()[i * n..(i + 1) * n].iter().sum();
            out.data_mut()[i] = s / n as f64;
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
                let n = d[2] * d[3];
                let inv = 1.0 / n as f64;
                let acc = store.accum(xi, &d);
                for (i, &gv) in g.data().iter().enumerate() {
                    for v in &mut acc.data_mut()[i * n..(i + 1) * n] {
                        *v += gv * inv;
                    }
                }
            }
        }),
    ))
}

/// Row means of each batch matrix: [B,D,D] -> [B,D].
pub fn row_means(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 3 || d[1] != d[2] {
            return Err(shape_err("row_means", format!("want [B,D,D], got {:?}", d)));
        }
        let (b, dd) = (d[0], d[1]);
        let mut out = Tensor::zeros(&[b, dd]);
        for i in 0..b * dd {
            let s: f64 = t.data()[i * dd..(i + 1) * dd].iter().sum();
            out.data_mut()[i] = s / dd as f64;
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
                let dd = d[1];
                let inv = 1.0 / dd as f64;
                let acc = store.accum(xi, &d);
                for (i, &gv) in g.data().iter().enumerate() {
                    for v in &mut acc.data_mut()[i * dd..(i + 1) * dd] {
                        *v += gv * inv;
                    }
                }
            }
        }),
    ))
}

/// Sum over rows: [B,D] -> [D]. Addends are sorted per column before
/// summing, so the result is bit-identical under any row permutation
/// (reordering a batch must not change downstream correlation matrices).
pub fn sum_rows(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 2 {
            return Err(shape_err("sum_rows", format!("want [B,D], got {:?}", d)));
        }
        let (b, dd) = (d[0], d[1]);
        let mut out = Tensor::zeros(&[dd]);
        let mut col = vec![0.0; b];
        for j in 0..dd {
            for i in 0..b {
                col[i] = t.data()[i * dd + j];
            }
            col.sort_unstable_by(f64::total_cmp);
            out.data_mut()[j] = col.iter().sum();
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
                let dd = d[1];
                let acc = store.accum(xi, &d);
                for row in acc.data_mut().chunks_mut(dd) {
                    for (v, &gv) in row.iter_mut().zip(g.data()) {
                        *v += gv;
                    }
                }
            }
        }),
    ))
}

pub fn trace(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 2 || d[0] != d[1] {
            return Err(shape_err("trace", format!("want square matrix, got {:?}", d)));
        }
        let n = d[0];
        Ok(Tensor::scalar((0..n).map(|i| t.data()[i * n + i]).sum()))
    })?;
    let xi = x.id;
    Ok(tape.push(
        value,
        tape.needs_grad(x),
        Box::new(move |vals, g, store| {
            if store.wants_id(xi) {
                let n = vals[xi].dims()[0];
                let gv = g.data()[0];
                let acc = store.accum(xi, vals[xi].dims());
                for i in 0..n {
                    acc.data_mut()[i * n + i] += gv;
                }
            }
        }),
    ))
}

/// Diagonal of a square matrix: [P,P] -> [P].
pub fn diag(tape: &Tape, x: Var) -> Result<Var> {
    let value = tape.with_value(x, |t| -> Result<Tensor> {
        let d = t.dims();
        if d.len() != 2 || d[0] != d[1] {
            return Err(shape_err("diag", format!("want square matrix, got {:?}", d)));
        }
        let n = d[0];
        let data = (0..n).map(|i| t.data()[i * n + i]).collect();
        Tensor::new(&[n], data)
    })?;
    let xi = x.id;
    Ok(tape.push(
        value,
        tape.needs_grad(x),
        Box::new(move |vals, g, store| {
            if store.wants_id(xi) {
                let n = vals[xi].dims()[0];
                let acc = store.accum(xi, vals[xi].dims());
                for (i, &gv) in g.data().iter().enumerate() {
                    acc.data_mut()[i * n + i] += gv;
                }
            }
        }),
    ))
}

/// Rows scaled to unit Euclidean norm, with denominator max(‖row‖, eps).
/// Returns the var and how many rows hit the eps guard.
pub fn l2_normalize_rows(tape: &Tape, x: Var, eps: f64) -> Result<(Var, usize)> {
    let (value, norms) = tape.with_value(x, |t| -> Result<(Tensor, Vec<f64>)> {
        let d = t.dims();
        if d.len() != 2 {
            return Err(shape_err("l2_normalize_rows", format!("want [B,D], got {:?}", d)));
        }
        let (b, dd) = (d[0], d[1]);
        let mut out = Tensor::zeros(&[b, dd]);
        let mut norms = Vec::with_capacity(b);
        for i in 0..b {
            let row = &t.data()[i * dd..(i + 1) * dd];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            let denom = n.max(eps);
            for (o, &v) in out.data_mut()[i * dd..(i + 1) * dd].iter_mut().zip(row) {
                *o = v / denom;
            }
        }
        Ok((out, norms))
    })?;
    let degenerate = norms.iter().filter(|&&n| n < eps).count();
    let xi = x.id;
    let var = tape.push(
        value,
        tape.needs_grad(x),
        Box::new(move |vals, g, store| {
            if !store.wants_id(xi) {
                return;
            }
            let d = vals[xi].dims().to_vec();
            let dd = d[1];
            let acc = store.accum(xi, &d);
            for (i, &n) in norms.iter().enumerate() {
                let row = &vals[xi].data()[i * dd..(i + 1) * dd];
                let grow = &g.data()[i * dd..(i + 1) * dd];
                let out_acc = &mut acc.data_mut()[i * dd..(i + 1) * dd];
                if n < eps {
                    // Guarded branch: constant denominator eps.
                    for (dst, &gv) in out_acc.iter_mut().zip(grow) {
                        *dst += gv / eps;
                    }
                } else {
                    let dot: f64 = row.iter().zip(grow).map(|(&v, &gv)| v * gv).sum();
                    for ((dst, &gv), &v) in out_acc.iter_mut().zip(grow).zip(row) {
                        *dst += gv / n - v * dot / (n * n * n);
                    }
                }
            }
        }),
    );
    Ok((var, degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::testutil::{rand_tensor, rand_tensor_off_zero, scalarize};
    use crate::tensor::Tensor;

    #[test]
    fn gap_of_known_map() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = tape.value(gap(&tape, x).unwrap());
        assert_eq!(out, Tensor::new(&[1, 1], vec![2.5]).unwrap());
    }

    #[test]
    fn gap_of_constant_map_is_the_constant() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3, 4, 4], -0.75));
        let out = tape.value(gap(&tape, x).unwrap());
        assert_eq!(out, Tensor::full(&[2, 3], -0.75));
    }

    #[test]
    fn gap_matches_nested_loop_oracle() {
        let t = rand_tensor(31, &[2, 4, 5, 3]);
        let tape = Tape::new();
        let x = tape.constant(t.clone());
        let out = tape.value(gap(&tape, x).unwrap());
        let (b, d, h, j) = (2, 4, 5, 3);
        for bi in 0..b {
            for di in 0..d {
                let mut acc = 0.0;
                for y in 0..h {
                    for xx in 0..j {
                        acc += t.data()[((bi * d + di) * h + y) * j + xx];
                    }
                }
                let want = acc / (h * j) as f64;
                assert!((out.data()[bi * d + di] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_means_and_trace_and_diag_on_known_matrix() {
        let tape = Tape::new();
        // Batch of one 2x2 matrix [[1,2],[3,4]].
        let m = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let rm = tape.value(row_means(&tape, m).unwrap());
        assert_eq!(rm, Tensor::new(&[1, 2], vec![1.5, 3.5]).unwrap());

        let sq = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(tape.value(trace(&tape, sq).unwrap()), Tensor::scalar(5.0));
        assert_eq!(
            tape.value(diag(&tape, sq).unwrap()),
            Tensor::new(&[2], vec![1.0, 4.0]).unwrap()
        );
    }

    #[test]
    fn sum_rows_collapses_batch() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[3, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap());
        let out = tape.value(sum_rows(&tape, x).unwrap());
        assert_eq!(out, Tensor::new(&[2], vec![6.0, 60.0]).unwrap());
    }

    #[test]
    fn l2_normalize_makes_unit_rows_and_counts_degenerates() {
        let tape = Tape::new();
        let x = tape.constant(
            Tensor::new(&[3, 2], vec![3.0, 4.0, 0.0, 0.0, -1.0, 0.0]).unwrap(),
        );
        let (v, degenerate) = l2_normalize_rows(&tape, x, 1e-12).unwrap();
        assert_eq!(degenerate, 1);
        let out = tape.value(v);
        assert_eq!(&out.data()[0..2], &[0.6, 0.8]);
        assert_eq!(&out.data()[2..4], &[0.0, 0.0]);
        assert_eq!(&out.data()[4..6], &[-1.0, 0.0]);
    }

    #[test]
    fn gradcheck_reductions() {
        for trial in 0..5u64 {
            let map = rand_tensor(900 + trial, &[2, 3, 4, 2]);
            let mat = rand_tensor(910 + trial, &[2, 4, 4]);
            let sq = rand_tensor(920 + trial, &[4, 4]);
            let rows = rand_tensor(930 + trial, &[3, 4]);
            let cases: Vec<(&str, Tensor, Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>)> = vec![
                ("sum", map.clone(), Box::new(|t, xs| sum(t, xs[0]))),
                ("mean", map.clone(), Box::new(|t, xs| mean(t, xs[0]))),
                ("gap", map.clone(), Box::new(|t, xs| scalarize(t, gap(t, xs[0])?, 7))),
                ("row_means", mat, Box::new(|t, xs| scalarize(t, row_means(t, xs[0])?, 7))),
                ("sum_rows", rows.clone(), Box::new(|t, xs| scalarize(t, sum_rows(t, xs[0])?, 7))),
                ("trace", sq.clone(), Box::new(|t, xs| trace(t, xs[0]))),
                ("diag", sq, Box::new(|t, xs| scalarize(t, diag(t, xs[0])?, 7))),
            ];
            for (name, input, f) in cases {
                let rep = gradcheck(f, &[input], 1e-5, 1e-4).unwrap();
                assert!(rep.pass, "{name} trial {trial}: {rep}");
            }
            // Rows bounded away from zero norm so the guard branch stays off.
            let safe = rand_tensor_off_zero(940 + trial, &[3, 4], 0.2);
            let rep = gradcheck(
                |t, xs| scalarize(t, l2_normalize_rows(t, xs[0], 1e-12)?.0, 7),
                &[safe],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(rep.pass, "l2_normalize_rows trial {trial}: {rep}");
        }
    }

    #[test]
    fn gap_passes_harness_at_tight_tolerance() {
        let rep = gradcheck(
            |t, xs| scalarize(t, gap(t, xs[0])?, 7),
            &[rand_tensor(32, &[2, 4, 6, 6])],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(rep.pass, "{rep}");
    }
}
