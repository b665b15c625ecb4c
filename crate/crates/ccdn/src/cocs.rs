//! Cross-order cross-semantic decorrelation (COCS): pooled-feature
//! correlations across the P excitation blocks, the ratio loss that drives
//! off-diagonal correlations down while keeping within-block correlation up,
//! and the cross-layer feature-fusing (CFF) block whose outputs feed the
//! third correlation matrix.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, BnState, Mode};
use crate::params::{uniform_fan_in, BnId, BnStates, Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Norm floor for the pooled-feature normalization.
pub const POOL_EPS: f64 = 1e-12;

/// GAP each map and l2-normalize per batch item. Returns one [B,D] feature
/// matrix per excitation plus the number of zero-norm items that took the
/// guard path (nonzero counts signal collapsed features upstream).
pub fn pool_normalize(tape: &Tape, maps: &[Var]) -> Result<(Vec<Var>, usize)> {
    let mut features = Vec::with_capacity(maps.len());
    let mut degenerate = 0;
    for &m in maps {
        let pooled = ops::gap(tape, m)?;
        let (f, bad) = ops::l2_normalize_rows(tape, pooled, POOL_EPS)?;
        degenerate += bad;
        features.push(f);
    }
    Ok((features, degenerate))
}

/// Pairwise block correlations: Q[p,p'] = (1/B^2) sum over all batch pairs of
/// f_{p,i} . f_{p',j}, computed as the Gram matrix of the per-block feature
/// sums. Symmetric by construction; invariant to batch order bit for bit.
pub fn excitation_correlations(tape: &Tape, features: &[Var]) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::Config("excitation_correlations needs at least one block".into()));
    }
    let b = tape.dims(features[0])[0];
    let mut sums = Vec::with_capacity(features.len());
    for &f in features {
        if tape.dims(f)[0] != b {
            return Err(Error::Shape {
                op: "excitation_correlations",
                detail: "feature blocks disagree on batch size".into(),
            });
        }
        sums.push(ops::sum_rows(tape, f)?);
    }
    let g = ops::stack(tape, &sums)?;
    let gram = ops::matmul_nt(tape, g, g)?;
    ops::scale(tape, gram, 1.0 / (b * b) as f64)
}

/// Ratio loss L(Q) = (|Q|_F^2 - |diag Q|^2) / |diag Q|^2. Zero when Q is
/// diagonal; scale-invariant in Q. A zero diagonal means every block's
/// features collapsed and is rejected.
pub fn cross_semantic_loss(tape: &Tape, q: Var) -> Result<Var> {
    let dims = tape.dims(q);
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(Error::Shape {
            op: "cross_semantic_loss",
            detail: format!("want square [P,P], got {:?}", dims),
        });
    }
    let fro = ops::sum(tape, ops::square(tape, q)?)?;
    let dd = ops::sum(tape, ops::square(tape, ops::diag(tape, q)?)?)?;
    if tape.value(dd).item()? == 0.0 {
        return Err(Error::Numerics(
            "correlation matrix has zero diagonal (collapsed features)".into(),
        ));
    }
    ops::div_scalars(tape, ops::sub(tape, fro, dd)?, dd)
}

/// The three regularizer terms, one per correlation matrix (last stage,
/// previous stage, fused), kept separate so the objective can weight them.
pub fn cocs_loss(tape: &Tape, q_t: Var, q_t1: Var, q_g: Var) -> Result<[Var; 3]> {
    let pt = tape.dims(q_t);
    if tape.dims(q_t1) != pt || tape.dims(q_g) != pt {
        return Err(Error::Shape {
            op: "cocs_loss",
            detail: "correlation matrices disagree on P".into(),
        });
    }
    Ok([
        cross_semantic_loss(tape, q_t)?,
        cross_semantic_loss(tape, q_t1)?,
        cross_semantic_loss(tape, q_g)?,
    ])
}

/// Cross-layer feature fusing: 1x1 conv on the small map, transposed-conv
/// upscale to double resolution, add the large map, 3x3 conv, batch norm.
#[derive(Debug, Clone)]
pub struct CffParams {
    pub k1: ParamId,
    pub deconv: ParamId,
    pub k2: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub bn: BnId,
    pub deconv_k: usize,
}

impl CffParams {
    pub fn create(
        store: &mut ParamStore,
        bns: &mut BnStates,
        rng: &mut impl Rng,
        prefix: &str,
        d: usize,
        deconv_k: usize,
    ) -> Result<Self> {
        if deconv_k != 2 && deconv_k != 4 {
            return Err(Error::Config(format!(
                "upscale kernel must be 2 or 4, got {deconv_k}"
            )));
        }
        let k1 = store.add(&format!("{prefix}.k1"), uniform_fan_in(rng, &[d, d, 1, 1], d), true)?;
        let deconv = store.add(
            &format!("{prefix}.up"),
            uniform_fan_in(rng, &[d, d, deconv_k, deconv_k], d * deconv_k * deconv_k),
            true,
        )?;
        let k2 =
            store.add(&format!("{prefix}.k2"), uniform_fan_in(rng, &[d, d, 3, 3], d * 9), true)?;
        let gamma = store.add(&format!("{prefix}.bn.g"), Tensor::full(&[d], 1.0), true)?;
        let beta = store.add(&format!("{prefix}.bn.b"), Tensor::zeros(&[d]), true)?;
        let bn = bns.add(&format!("{prefix}.bn"), d)?;
        Ok(Self { k1, deconv, k2, gamma, beta, bn, deconv_k })
    }

    pub fn bind(&self, bound: &Bound) -> CffVars {
        CffVars {
            k1: bound.var(self.k1),
            deconv: bound.var(self.deconv),
            k2: bound.var(self.k2),
            gamma: bound.var(self.gamma),
            beta: bound.var(self.beta),
        }
    }
}

pub struct CffVars {
    pub k1: Var,
    pub deconv: Var,
    pub k2: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// x_t at [B,D,H,J], x_t1 at [B,D,2H,2J]; output matches x_t1.
pub fn cff_fuse(
    tape: &Tape,
    x_t: Var,
    x_t1: Var,
    vars: &CffVars,
    state: &mut BnState,
    mode: Mode,
) -> Result<Var> {
    let small = tape.dims(x_t);
    let large = tape.dims(x_t1);
    if small.len() != 4
        || large.len() != 4
        || large[2] != 2 * small[2]
        || large[3] != 2 * small[3]
        || large[0] != small[0]
        || large[1] != small[1]
    {
        return Err(Error::Shape {
            op: "cff_fuse",
            detail: format!("want 2:1 spatial ratio, got {:?} vs {:?}", small, large),
        });
    }
    let projected = ops::conv2d(tape, x_t, vars.k1, None, 1)?;
    let upscaled = ops::deconv2d(tape, projected, vars.deconv, None, 2)?;
    let merged = ops::add(tape, upscaled, x_t1)?;
    let mixed = ops::conv2d(tape, merged, vars.k2, None, 1)?;
    ops::batchnorm(tape, mixed, vars.gamma, vars.beta, state, ops::BN_MOMENTUM, ops::BN_EPS, mode)
}

/// Gradient-descent decorrelation on free feature vectors; returns the mean
/// absolute off-diagonal and the diagonal mean of Q after `steps`.
///
/// Each block's features start clustered around a shared random direction
/// (as pooled features behind one gating block would be), so the diagonal
/// begins high; the descent must separate the blocks without destroying the
/// within-block alignment. Exercises the loss in isolation.
pub fn decorrelation_descent(
    seed: u64,
    d: usize,
    p: usize,
    b: usize,
    steps: usize,
    lr: f64,
) -> Result<(f64, f64)> {
    let mut rng = crate::rng::stream(seed, "decorrelation");
    let mut feats: Vec<Tensor> = (0..p)
        .map(|_| {
            let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let data = (0..b)
                .flat_map(|_| {
                    center
                        .iter()
                        .map(|&c| c + 0.3 * rng.gen_range(-1.0..1.0))
                        .collect::<Vec<f64>>()
                })
                .collect();
            Tensor::new(&[b, d], data)
        })
        .collect::<Result<_>>()?;
    for _ in 0..steps {
        let tape = Tape::new();
        let leaves: Vec<Var> = feats.iter().map(|t| tape.leaf(t.clone())).collect();
        let mut normalized = Vec::with_capacity(p);
        for &v in &leaves {
            normalized.push(ops::l2_normalize_rows(&tape, v, POOL_EPS)?.0);
        }
        let q = excitation_correlations(&tape, &normalized)?;
        let loss = cross_semantic_loss(&tape, q)?;
        let grads = tape.backward(loss)?;
        for (t, &v) in feats.iter_mut().zip(&leaves) {
            if let Some(g) = grads.get(v) {
                for (x, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *x -= lr * gv;
                }
            }
        }
    }
    // Measure the final Q.
    let tape = Tape::new();
    let leaves: Vec<Var> = feats.iter().map(|t| tape.constant(t.clone())).collect();
    let mut normalized = Vec::with_capacity(p);
    for &v in &leaves {
        normalized.push(ops::l2_normalize_rows(&tape, v, POOL_EPS)?.0);
    }
    let q = tape.value(excitation_correlations(&tape, &normalized)?);
    let mut off_sum = 0.0;
    let mut diag_sum = 0.0;
    for i in 0..p {
        for j in 0..p {
            let v = q.data()[i * p + j];
            if i == j {
                diag_sum += v;
            } else {
                off_sum += v.abs();
            }
        }
    }
    let mean_off = if p > 1 { off_sum / (p * (p - 1)) as f64 } else { 0.0 };
    Ok((mean_off, diag_sum / p as f64))
}
