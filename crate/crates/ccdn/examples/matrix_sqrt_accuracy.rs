//! Convergence of the coupled square-root iteration on SPD matrices with a
//! controlled condition number. The residual reported is |Y*Y - S|_F / |S|_F.

use ccdn::ops;
use ccdn::tape::Tape;
use ccdn::tensor::Tensor;
use rand::Rng;

/// Householder reflection from a random vector: exactly orthogonal, so the
/// spectrum of Q diag(l) Q^T is the chosen eigenvalue ladder.
fn spd(d: usize, cond: f64, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let q = |i: usize, j: usize| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - 2.0 * v[i] * v[j] / vv
    };
    // Log-spaced eigenvalues from 1 down to 1/cond.
    let eig: Vec<f64> = (0..d)
        .map(|k| (-(k as f64) / (d - 1) as f64 * cond.ln()).exp())
        .collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| q(i, k) * eig[k] * q(j, k)).sum();
        }
    }
    m
}

fn residual(sigma: &[f64], root: &[f64], d: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..d {
        for j in 0..d {
            let yy: f64 = (0..d).map(|k| root[i * d + k] * root[k * d + j]).sum();
            num += (yy - sigma[i * d + j]).powi(2);
            den += sigma[i * d + j].powi(2);
        }
    }
    (num / den).sqrt()
}

fn main() {
    let mut rng = ccdn::rng::stream(0, "sqrt-demo");
    println!("{:>4} {:>6}  residual after 1..7 iterations", "d", "cond");
    for &d in &[4usize, 8, 16] {
        for &cond in &[10.0, 100.0] {
            let sigma = spd(d, cond, &mut rng);
            print!("{d:>4} {cond:>6.0} ");
            for iters in 1..=7 {
                let tape = Tape::new();
                let sv = tape.constant(Tensor::new(&[d, d], sigma.clone()).unwrap());
                let root = ops::newton_schulz_sqrt(&tape, sv, iters).unwrap();
                print!(" {:.1e}", residual(&sigma, tape.value(root).data(), d));
            }
            println!();
        }
    }

    // The identity is a fixed point; the iteration must return it untouched.
    let d = 8;
    let tape = Tape::new();
    let eye = tape.constant(Tensor::eye(d));
    let root = ops::newton_schulz_sqrt(&tape, eye, 5).unwrap();
    let worst = tape
        .value(root)
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| (v - if k / d == k % d { 1.0 } else { 0.0 }).abs())
        .fold(0.0f64, f64::max);
    println!("\nidentity fixed point, max abs deviation: {worst:.2e}");
}
