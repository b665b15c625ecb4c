//! Central-difference verification of reverse-mode gradients, plus the
//! standard battery that sweeps every primitive and the composed chains.

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use battery::{battery, BatteryRow, BATTERY_EPS, DEFAULT_TOL, ROOT_TOL};

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Worst relative error per input tensor, in input order.
    pub per_input: Vec<f64>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (max rel err {:.3e}, tol {:.1e})",
            if self.pass { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.tol
        )
    }
}

/// Relative error with a floor so near-zero gradients compare absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Checks d(scalar f)/d(inputs) against central finite differences.
/// `f` must be deterministic; float64 throughout. Default eps 1e-5.
pub fn gradcheck(
    f: impl Fn(&Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
) -> Result<GradReport> {
    // Analytic gradients.
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.dims(out).iter().product::<usize>() != 1 {
        return Err(shape_err("gradcheck", format!("f must be scalar, got {:?}", tape.dims(out))));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.dims())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        tape.value(out).item()
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut worst = 0.0f64;
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
        per_input.push(worst);
    }
    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradReport { per_input, max_rel_err, tol, pass: max_rel_err < tol })
}

mod battery {
    use rand::Rng;
    use rand_chacha::ChaCha12Rng;

    use super::{gradcheck, GradReport};
    use crate::cocs::{self, CffParams};
    use crate::ctm::{self, ExcitationBank};
    use crate::error::Result;
    use crate::model::{objective, Model, ModelConfig, Variant};
    use crate::ops::{self, Act, BnState, Mode};
    use crate::params::{BnStates, Bound, ParamStore};
    use crate::tape::{Tape, Var};
    use crate::tensor::Tensor;

    pub const BATTERY_EPS: f64 = 1e-5;
    pub const DEFAULT_TOL: f64 = 1e-4;
    /// Paths through the iterative matrix root accumulate more
    /// finite-difference noise, so they get a looser gate.
    pub const ROOT_TOL: f64 = 1e-3;

    #[derive(Debug, Clone)]
    pub struct BatteryRow {
        pub name: &'static str,
        pub trials: usize,
        pub max_rel_err: f64,
        pub tol: f64,
        pub pass: bool,
    }

    impl std::fmt::Display for BatteryRow {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(
                f,
                "{:<22} {:>10.3e}  {:>7.0e}  {}",
                self.name,
                self.max_rel_err,
                self.tol,
                if self.pass { "pass" } else { "FAIL" }
            )
        }
    }

    fn rt(rng: &mut ChaCha12Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(dims, data).expect("finite by construction")
    }

    /// Magnitudes in [margin, margin+span] with random signs; keeps inputs
    /// away from kinks (relu at 0, division by 0, near-tied maxima).
    fn rt_away(rng: &mut ChaCha12Rng, dims: &[usize], margin: f64, span: f64) -> Tensor {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.gen_range(margin..margin + span)
            })
            .collect();
        Tensor::new(dims, data).expect("finite by construction")
    }

    /// Projects any tensor to a scalar with fixed varied weights so the
    /// upstream gradient differs per element (a plain sum would hide
    /// index-permutation bugs).
    fn project(tape: &Tape, v: Var, salt: u64) -> Result<Var> {
        let dims = tape.dims(v).to_vec();
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|i| ((i as f64 + 1.3) * (salt as f64 * 0.7 + 1.1)).sin())
            .collect();
        let w = tape.constant(Tensor::new(&dims, data)?);
        ops::sum(tape, ops::mul(tape, v, w)?)
    }

    fn run_row(
        name: &'static str,
        tol: f64,
        trials: usize,
        seed: u64,
        trial: impl Fn(&mut ChaCha12Rng) -> Result<GradReport>,
    ) -> Result<BatteryRow> {
        let mut rng = crate::rng::stream(seed, name);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(trial(&mut rng)?.max_rel_err);
        }
        Ok(BatteryRow { name, trials, max_rel_err: worst, tol, pass: worst < tol })
    }

    /// Checks every primitive and the composed attention, decorrelation,
    /// fusion, and whole-model chains against central finite differences,
    /// `trials` random instances each. Deterministic in `seed`.
    pub fn battery(trials: usize, seed: u64) -> Result<Vec<BatteryRow>> {
        let mut rows = Vec::new();
        let mut push = |row: Result<BatteryRow>| -> Result<()> {
            rows.push(row?);
            Ok(())
        };

        // Elementwise.
        push(run_row("add", DEFAULT_TOL, trials, seed, |r| {
            let dims = [r.gen_range(2..5), r.gen_range(2..5)];
            gradcheck(
                |t, xs| project(t, ops::add(t, xs[0], xs[1])?, 1),
                &[rt(r, &dims, -1.0, 1.0), rt(r, &dims, -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("sub", DEFAULT_TOL, trials, seed, |r| {
            let dims = [r.gen_range(2..5), r.gen_range(2..5)];
            gradcheck(
                |t, xs| project(t, ops::sub(t, xs[0], xs[1])?, 2),
                &[rt(r, &dims, -1.0, 1.0), rt(r, &dims, -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("mul", DEFAULT_TOL, trials, seed, |r| {
            let dims = [r.gen_range(2..5), r.gen_range(2..5)];
            gradcheck(
                |t, xs| project(t, ops::mul(t, xs[0], xs[1])?, 3),
                &[rt(r, &dims, -1.0, 1.0), rt(r, &dims, -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("scale", DEFAULT_TOL, trials, seed, |r| {
            let c = r.gen_range(-2.0..2.0);
            gradcheck(
                move |t, xs| project(t, ops::scale(t, xs[0], c)?, 4),
                &[rt(r, &[3, 3], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("square", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::square(t, xs[0])?, 5),
                &[rt(r, &[2, 4], -1.5, 1.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("sqrt", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::sqrt(t, xs[0])?, 6),
                &[rt(r, &[2, 4], 0.3, 2.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("maximum", DEFAULT_TOL, trials, seed, |r| {
            // Keep the two branches separated so no perturbation flips a tie.
            let a = rt(r, &[3, 3], -1.0, 1.0);
            let mut bdata = Vec::with_capacity(a.len());
            for &v in a.data() {
                let gap = r.gen_range(0.2..1.0);
                bdata.push(if r.gen_bool(0.5) { v + gap } else { v - gap });
            }
            let b = Tensor::new(&[3, 3], bdata)?;
            gradcheck(
                |t, xs| project(t, ops::maximum(t, xs[0], xs[1])?, 7),
                &[a, b],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("relu", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::activate(t, xs[0], Act::Relu)?, 8),
                &[rt_away(r, &[3, 4], 0.1, 1.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("sigmoid", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::activate(t, xs[0], Act::Sigmoid)?, 9),
                &[rt(r, &[3, 4], -3.0, 3.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("mul_scalar_var", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::mul_scalar_var(t, xs[0], xs[1])?, 10),
                &[rt(r, &[2, 3], -1.0, 1.0), rt_away(r, &[1], 0.5, 1.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("div_scalar_var", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::div_scalar_var(t, xs[0], xs[1])?, 11),
                &[rt(r, &[2, 3], -1.0, 1.0), rt_away(r, &[1], 0.5, 1.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("div_scalars", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| ops::div_scalars(t, xs[0], xs[1]),
                &[rt(r, &[1], -1.0, 1.0), rt_away(r, &[1], 0.5, 1.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;

        // Reductions.
        push(run_row("sum", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(|t, xs| ops::sum(t, xs[0]), &[rt(r, &[3, 4], -1.0, 1.0)], BATTERY_EPS, DEFAULT_TOL)
        }))?;
        push(run_row("mean", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(|t, xs| ops::mean(t, xs[0]), &[rt(r, &[3, 4], -1.0, 1.0)], BATTERY_EPS, DEFAULT_TOL)
        }))?;
        push(run_row("gap", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::gap(t, xs[0])?, 12),
                &[rt(r, &[2, 3, 3, 2], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("row_means", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::row_means(t, xs[0])?, 13),
                &[rt(r, &[2, 4, 4], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("sum_rows", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::sum_rows(t, xs[0])?, 14),
                &[rt(r, &[4, 3], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("trace", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(|t, xs| ops::trace(t, xs[0]), &[rt(r, &[4, 4], -1.0, 1.0)], BATTERY_EPS, DEFAULT_TOL)
        }))?;
        push(run_row("diag", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::diag(t, xs[0])?, 15),
                &[rt(r, &[4, 4], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("l2_normalize_rows", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::l2_normalize_rows(t, xs[0], 1e-12)?.0, 16),
                &[rt_away(r, &[3, 4], 0.3, 1.2)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;

        // Matrix products.
        push(run_row("matmul", DEFAULT_TOL, trials, seed, |r| {
            let (m, k, n) = (r.gen_range(2..4), r.gen_range(2..5), r.gen_range(2..4));
            gradcheck(
                |t, xs| project(t, ops::matmul(t, xs[0], xs[1])?, 17),
                &[rt(r, &[m, k], -1.0, 1.0), rt(r, &[k, n], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("matmul_nt", DEFAULT_TOL, trials, seed, |r| {
            let (m, k, n) = (r.gen_range(2..4), r.gen_range(2..5), r.gen_range(2..4));
            gradcheck(
                |t, xs| project(t, ops::matmul_nt(t, xs[0], xs[1])?, 18),
                &[rt(r, &[m, k], -1.0, 1.0), rt(r, &[n, k], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("batch_matmul_nt", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::batch_matmul_nt(t, xs[0], xs[1])?, 19),
                &[rt(r, &[2, 3, 4], -1.0, 1.0), rt(r, &[2, 2, 4], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("linear", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::linear(t, xs[0], xs[1], Some(xs[2]))?, 20),
                &[rt(r, &[3, 4], -1.0, 1.0), rt(r, &[2, 4], -1.0, 1.0), rt(r, &[2], -0.5, 0.5)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;

        // Spatial.
        push(run_row("conv2d", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::conv2d(t, xs[0], xs[1], None, 1)?, 21),
                &[rt(r, &[2, 2, 4, 4], -1.0, 1.0), rt(r, &[3, 2, 3, 3], -0.7, 0.7)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("conv2d_strided_bias", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::conv2d(t, xs[0], xs[1], Some(xs[2]), 2)?, 22),
                &[
                    rt(r, &[1, 2, 6, 6], -1.0, 1.0),
                    rt(r, &[2, 2, 3, 3], -0.7, 0.7),
                    rt(r, &[2], -0.5, 0.5),
                ],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("deconv2d", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::deconv2d(t, xs[0], xs[1], None, 2)?, 23),
                &[rt(r, &[1, 2, 3, 3], -1.0, 1.0), rt(r, &[2, 2, 2, 2], -0.7, 0.7)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("avgpool2", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::avgpool2(t, xs[0])?, 24),
                &[rt(r, &[2, 3, 4, 4], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("upsample2", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::upsample2(t, xs[0])?, 25),
                &[rt(r, &[1, 2, 3, 3], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("batchnorm", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| {
                    let mut st = BnState::new(3);
                    let y = ops::batchnorm(
                        t,
                        xs[0],
                        xs[1],
                        xs[2],
                        &mut st,
                        ops::BN_MOMENTUM,
                        ops::BN_EPS,
                        Mode::Train,
                    )?;
                    project(t, y, 26)
                },
                &[
                    rt(r, &[3, 3, 2, 2], -1.0, 1.0),
                    rt(r, &[3], 0.5, 1.5),
                    rt(r, &[3], -0.3, 0.3),
                ],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;

        // Structure.
        push(run_row("reshape", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::reshape(t, xs[0], &[3, 4])?, 27),
                &[rt(r, &[2, 6], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("concat_channels", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::concat_channels(t, xs)?, 28),
                &[rt(r, &[1, 2, 3, 3], -1.0, 1.0), rt(r, &[1, 3, 3, 3], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("batch_item", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::batch_item(t, xs[0], 1)?, 29),
                &[rt(r, &[3, 2, 2, 2], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("stack", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::stack(t, xs)?, 30),
                &[rt(r, &[2, 3], -1.0, 1.0), rt(r, &[2, 3], -1.0, 1.0), rt(r, &[2, 3], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("broadcast_mul_channel", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::broadcast_mul_channel(t, xs[0], xs[1])?, 31),
                &[rt(r, &[2, 3, 2, 2], -1.0, 1.0), rt(r, &[2, 3], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;

        // Covariance pooling.
        push(run_row("center_rows", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::center_rows(t, xs[0])?, 32),
                &[rt(r, &[2, 3, 4], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("covariance", DEFAULT_TOL, trials, seed, |r| {
            gradcheck(
                |t, xs| project(t, ops::covariance(t, xs[0])?, 33),
                &[rt(r, &[2, 3, 6], -1.0, 1.0)],
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("newton_schulz_sqrt", ROOT_TOL, trials, seed, |r| {
            // Perturbed leaves sit before the covariance so the root always
            // sees a symmetric PSD argument; the ridge keeps it well away
            // from singular.
            let d = 3;
            gradcheck(
                move |t, xs| {
                    let sigma = ops::batch_item(t, ops::covariance(t, xs[0])?, 0)?;
                    let eye = t.constant(Tensor::eye(d));
                    let spd = ops::add(t, sigma, ops::scale(t, eye, 0.05)?)?;
                    project(t, ops::newton_schulz_sqrt(t, spd, 5)?, 34)
                },
                &[rt(r, &[1, d, d + 3], -1.0, 1.0)],
                BATTERY_EPS,
                ROOT_TOL,
            )
        }))?;

        // Composed chains.
        push(run_row("ctm_chain", ROOT_TOL, trials, seed, |r| {
            let d = 4;
            let mut store = ParamStore::new();
            let bank = ExcitationBank::create(&mut store, r, "bank", d, 2, true)?;
            let mut inputs = vec![rt(r, &[1, d, 3, 3], -1.0, 1.0)];
            inputs.extend(store.iter().map(|(_, t, _)| t.clone()));
            gradcheck(
                move |t, xs| {
                    let bound = Bound::from_vars(xs[1..].to_vec());
                    let out = ctm::ctm_forward(t, xs[0], &bank.bind(&bound), 5)?;
                    let mut total = project(t, out.maps[0], 35)?;
                    for (i, &m) in out.maps.iter().enumerate().skip(1) {
                        total = ops::add(t, total, project(t, m, 35 + i as u64)?)?;
                    }
                    Ok(total)
                },
                &inputs,
                BATTERY_EPS,
                ROOT_TOL,
            )
        }))?;
        push(run_row("cocs_chain", DEFAULT_TOL, trials, seed, |r| {
            // Pool, normalize, correlate, and take the off-diagonal ratio
            // loss; positive maps keep the row norms safely nonzero.
            let maps =
                vec![rt(r, &[3, 4, 2, 2], 0.2, 1.2), rt(r, &[3, 4, 2, 2], 0.2, 1.2)];
            gradcheck(
                |t, xs| {
                    let (feats, _) = cocs::pool_normalize(t, xs)?;
                    let q = cocs::excitation_correlations(t, &feats)?;
                    cocs::cross_semantic_loss(t, q)
                },
                &maps,
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("cff_chain", DEFAULT_TOL, trials, seed, |r| {
            let d = 4;
            let mut store = ParamStore::new();
            let mut bns = BnStates::new();
            let cff = CffParams::create(&mut store, &mut bns, r, "cff", d, 2)?;
            let mut inputs =
                vec![rt(r, &[1, d, 2, 2], -1.0, 1.0), rt(r, &[1, d, 4, 4], -1.0, 1.0)];
            inputs.extend(store.iter().map(|(_, t, _)| t.clone()));
            gradcheck(
                move |t, xs| {
                    let bound = Bound::from_vars(xs[2..].to_vec());
                    let mut st = BnState::new(d);
                    let y =
                        cocs::cff_fuse(t, xs[0], xs[1], &cff.bind(&bound), &mut st, Mode::Train)?;
                    project(t, y, 40)
                },
                &inputs,
                BATTERY_EPS,
                DEFAULT_TOL,
            )
        }))?;
        push(run_row("full_model", ROOT_TOL, trials, seed, |r| {
            let config = ModelConfig {
                stacks: 2,
                channels: 4,
                excitations: 1,
                input_size: 32,
                landmarks: 1,
                variant: Variant::Ccdn,
                ns_iters: 5,
                deconv_k: 2,
            };
            let build_seed: u64 = r.gen();
            let model = Model::build(config.clone(), build_seed)?;
            let mut inputs = vec![rt(r, &[1, 1, 32, 32], 0.0, 1.0)];
            inputs.extend(model.store.iter().map(|(_, t, _)| t.clone()));
            let gt = rt(r, &[1, 2], 0.2, 0.8);
            gradcheck(
                move |t, xs| {
                    let mut m = Model::build(config.clone(), build_seed)?;
                    let bound = Bound::from_vars(xs[1..].to_vec());
                    let out = m.forward(t, &bound, xs[0], Mode::Train)?;
                    let target = t.constant(gt.clone());
                    let obj = objective(
                        t,
                        out.prediction,
                        target,
                        out.q.as_ref(),
                        (0.025, 0.01, 0.05),
                    )?;
                    Ok(obj.total)
                },
                &inputs,
                BATTERY_EPS,
                ROOT_TOL,
            )
        }))?;

        Ok(rows)
    }
}
