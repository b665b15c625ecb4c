//! Cross-order two-squeeze multi-excitation channel attention (CTM).
//!
//! One invocation squeezes a feature map into a first-order descriptor
//! (spatial means) and a second-order descriptor (row means of the matrix
//! square root of the channel covariance), then gates the map through P
//! independent excitation blocks per order. Both descriptors are computed
//! once and shared by all P blocks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{uniform_fan_in, Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative diagonal jitter added to the covariance before the square-root
/// iteration; guards rank-deficient maps such as constant channels.
pub const COV_JITTER: f64 = 1e-6;

/// One excitation gate: s = sigmoid(W_U relu(W_V kappa)), no biases.
#[derive(Debug, Clone, Copy)]
pub struct GatePair {
    pub w_v: ParamId,
    pub w_u: ParamId,
}

/// Parameters of the P excitation blocks, per order. The second-order set is
/// absent when the variant disables that branch; dropping it must remove
/// exactly those parameters and nothing else.
#[derive(Debug, Clone)]
pub struct ExcitationBank {
    d: usize,
    st: Vec<GatePair>,
    nd: Option<Vec<GatePair>>,
}

impl ExcitationBank {
    /// Registers 2 weight matrices per block and order under
    /// `{prefix}.p{i}.{st|nd}.{v|u}`. The bottleneck width is D/4.
    pub fn create(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        d: usize,
        p: usize,
        second_order: bool,
    ) -> Result<Self> {
        if d % 4 != 0 || d == 0 {
            return Err(Error::Config(format!("channel count must be divisible by 4, got {d}")));
        }
        if p == 0 {
            return Err(Error::Config("excitation count must be at least 1".into()));
        }
        let mut make_order = |ord: &str| -> Result<Vec<GatePair>> {
            (0..p)
                .map(|i| {
                    let w_v = store.add(
                        &format!("{prefix}.p{i}.{ord}.v"),
                        uniform_fan_in(rng, &[d / 4, d], d),
                        true,
                    )?;
                    let w_u = store.add(
                        &format!("{prefix}.p{i}.{ord}.u"),
                        uniform_fan_in(rng, &[d, d / 4], d / 4),
                        true,
                    )?;
                    Ok(GatePair { w_v, w_u })
                })
                .collect()
        };
        let st = make_order("st")?;
        let nd = if second_order { Some(make_order("nd")?) } else { None };
        Ok(Self { d, st, nd })
    }

    pub fn p(&self) -> usize {
        self.st.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_second_order(&self) -> bool {
        self.nd.is_some()
    }

    pub fn bind(&self, bound: &Bound) -> BankVars {
        let resolve = |pairs: &[GatePair]| {
            pairs.iter().map(|g| (bound.var(g.w_v), bound.var(g.w_u))).collect()
        };
        BankVars {
            d: self.d,
            st: resolve(&self.st),
            nd: self.nd.as_deref().map(resolve),
        }
    }
}

/// Bank weights materialized on a tape: (w_v, w_u) per block.
pub struct BankVars {
    d: usize,
    pub st: Vec<(Var, Var)>,
    pub nd: Option<Vec<(Var, Var)>>,
}

/// The two squeeze vectors, kept for inspection and tests.
pub struct ChannelDescriptor {
    pub first_order: Var,
    pub second_order: Option<Var>,
}

pub struct CtmOutput {
    /// P gated maps, each with the input's dims.
    pub maps: Vec<Var>,
    pub descriptor: ChannelDescriptor,
}

/// First-order squeeze: per-channel spatial mean.
pub fn first_order_squeeze(tape: &Tape, x: Var) -> Result<Var> {
    ops::gap(tape, x)
}

/// Second-order squeeze: channel covariance, jittered, matrix square root by
/// Newton-Schulz, then row means. [B,D,H,J] -> [B,D].
pub fn second_order_squeeze(tape: &Tape, x: Var, ns_iters: usize) -> Result<Var> {
    let dims = tape.dims(x);
    if dims.len() != 4 {
        return Err(Error::Shape {
            op: "second_order_squeeze",
            detail: format!("want [B,D,H,J], got {:?}", dims),
        });
    }
    let (b, d, n) = (dims[0], dims[1], dims[2] * dims[3]);
    if n < 2 {
        return Err(Error::Numerics(format!(
            "second_order_squeeze needs at least 2 spatial positions, got {n}"
        )));
    }
    let flat = ops::reshape(tape, x, &[b, d, n])?;
    let sigma = ops::covariance(tape, flat)?;
    let jitter_eye = tape.constant(Tensor::eye(d).map(|v| v * (COV_JITTER / d as f64)));
    let mut roots = Vec::with_capacity(b);
    for bi in 0..b {
        let sb = ops::batch_item(tape, sigma, bi)?;
        let tr = ops::trace(tape, sb)?;
        let jit = ops::mul_scalar_var(tape, jitter_eye, tr)?;
        let sj = ops::add(tape, sb, jit)?;
        roots.push(ops::newton_schulz_sqrt(tape, sj, ns_iters)?);
    }
    let stacked = ops::stack(tape, &roots)?;
    ops::row_means(tape, stacked)
}

/// Gate a map by one excitation block: per-channel scale
/// s = sigmoid(w_u relu(w_v kappa)).
pub fn excite(tape: &Tape, x: Var, kappa: Var, w_v: Var, w_u: Var) -> Result<Var> {
    let hidden = ops::activate(tape, ops::linear(tape, kappa, w_v, None)?, ops::Act::Relu)?;
    let s = ops::activate(tape, ops::linear(tape, hidden, w_u, None)?, ops::Act::Sigmoid)?;
    ops::broadcast_mul_channel(tape, x, s)
}

/// Full module: squeeze once per order, excite P times. With the
/// second-order branch absent each output is the first-order gating alone.
pub fn ctm_forward(tape: &Tape, x: Var, bank: &BankVars, ns_iters: usize) -> Result<CtmOutput> {
    let dims = tape.dims(x);
    if dims.len() != 4 || dims[1] != bank.d {
        return Err(Error::Shape {
            op: "ctm_forward",
            detail: format!("want [B,{},H,J], got {:?}", bank.d, dims),
        });
    }
    let k_st = first_order_squeeze(tape, x)?;
    let k_nd = match &bank.nd {
        Some(_) => Some(second_order_squeeze(tape, x, ns_iters)?),
        None => None,
    };
    let mut maps = Vec::with_capacity(bank.st.len());
    for (i, &(w_v, w_u)) in bank.st.iter().enumerate() {
        let first = excite(tape, x, k_st, w_v, w_u)?;
        let map = match (&bank.nd, k_nd) {
            (Some(nd), Some(k)) => {
                let (nv, nu) = nd[i];
                ops::add(tape, first, excite(tape, x, k, nv, nu)?)?
            }
            _ => first,
        };
        maps.push(map);
    }
    Ok(CtmOutput {
        maps,
        descriptor: ChannelDescriptor { first_order: k_st, second_order: k_nd },
    })
}
