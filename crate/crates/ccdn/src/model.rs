//! The CCDN assembly: a small stacked-hourglass trunk, channel attention on
//! the last two stack outputs, per-block feature fusing, and a pooled linear
//! head regressing landmark coordinates in [0,1] crop units.
//!
//! Three variants share the trunk:
//! - `baseline`: trunk and head only;
//! - `fcdn`: attention restricted to the first-order squeeze, plus the
//!   decorrelation machinery;
//! - `ccdn`: both squeeze orders.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cocs::{self, CffParams};
use crate::ctm::{self, ExcitationBank};
use crate::error::{Error, Result};
use crate::ops::{self, Act, Mode};
use crate::params::{uniform_fan_in, BnId, BnStates, Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Encoder-decoder levels per hourglass stack.
const HG_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Fcdn,
    Ccdn,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "fcdn" => Ok(Self::Fcdn),
            "ccdn" => Ok(Self::Ccdn),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected baseline, fcdn, or ccdn)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Fcdn => "fcdn",
            Self::Ccdn => "ccdn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stacks: usize,
    /// Channel width D; divisible by 4 (the excitation bottleneck is D/4).
    pub channels: usize,
    /// Excitation blocks P per attention site.
    pub excitations: usize,
    /// Square input side S; features run at S/4.
    pub input_size: usize,
    /// Landmark count L; the head regresses 2L coordinates.
    pub landmarks: usize,
    pub variant: Variant,
    pub ns_iters: usize,
    /// Upscale kernel side in the fusing block (2 or 4).
    pub deconv_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stacks: 2,
            channels: 32,
            excitations: 4,
            input_size: 64,
            landmarks: 12,
            variant: Variant::Ccdn,
            ns_iters: 5,
            deconv_k: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::Config(format!(
                "channels must be a positive multiple of 4, got {}",
                self.channels
            )));
        }
        if self.input_size < 32 || !self.input_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "input_size must be a power of two of at least 32, got {}",
                self.input_size
            )));
        }
        if self.stacks < 2 {
            return Err(Error::Config(format!(
                "at least 2 stacks needed (attention taps the last two), got {}",
                self.stacks
            )));
        }
        if self.landmarks == 0 {
            return Err(Error::Config("landmark count must be positive".into()));
        }
        if self.excitations == 0 {
            return Err(Error::Config("excitation count must be positive".into()));
        }
        if self.ns_iters == 0 {
            return Err(Error::Config("square-root iteration count must be positive".into()));
        }
        if self.deconv_k != 2 && self.deconv_k != 4 {
            return Err(Error::Config(format!(
                "upscale kernel must be 2 or 4, got {}",
                self.deconv_k
            )));
        }
        Ok(())
    }
}

/// One conv + batch norm + relu unit. The conv carries no bias; batch
/// normalization is invariant to per-channel constant shifts, so a bias
/// before it would receive zero gradient and stay at its initial value.
#[derive(Debug, Clone, Copy)]
struct ConvBn {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: BnId,
}

impl ConvBn {
    fn create(
        store: &mut ParamStore,
        bns: &mut BnStates,
        rng: &mut impl Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                &format!("{prefix}.w"),
                uniform_fan_in(rng, &[cout, cin, k, k], cin * k * k),
                true,
            )?,
            gamma: store.add(&format!("{prefix}.bn.g"), Tensor::full(&[cout], 1.0), true)?,
            beta: store.add(&format!("{prefix}.bn.b"), Tensor::zeros(&[cout]), true)?,
            bn: bns.add(&format!("{prefix}.bn"), cout)?,
        })
    }

    fn apply(
        &self,
        tape: &Tape,
        bound: &Bound,
        bns: &mut BnStates,
        x: Var,
        stride: usize,
        mode: Mode,
    ) -> Result<Var> {
        let c = ops::conv2d(tape, x, bound.var(self.w), None, stride)?;
        let n = ops::batchnorm(
            tape,
            c,
            bound.var(self.gamma),
            bound.var(self.beta),
            bns.get_mut(self.bn),
            ops::BN_MOMENTUM,
            ops::BN_EPS,
            mode,
        )?;
        ops::activate(tape, n, Act::Relu)
    }
}

#[derive(Debug, Clone)]
struct Hourglass {
    pre: Vec<ConvBn>,
    down: Vec<ConvBn>,
    mid: ConvBn,
    up: Vec<ConvBn>,
}

impl Hourglass {
    fn create(
        store: &mut ParamStore,
        bns: &mut BnStates,
        rng: &mut impl Rng,
        prefix: &str,
        d: usize,
    ) -> Result<Self> {
        let mut unit = |name: String| ConvBn::create(store, bns, rng, &name, d, d, 3);
        Ok(Self {
            pre: (0..HG_DEPTH).map(|i| unit(format!("{prefix}.pre{i}"))).collect::<Result<_>>()?,
            down: (0..HG_DEPTH)
                .map(|i| unit(format!("{prefix}.down{i}")))
                .collect::<Result<_>>()?,
            mid: unit(format!("{prefix}.mid"))?,
            up: (0..HG_DEPTH).map(|i| unit(format!("{prefix}.up{i}"))).collect::<Result<_>>()?,
        })
    }

    fn apply(
        &self,
        tape: &Tape,
        bound: &Bound,
        bns: &mut BnStates,
        mut x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut skips = Vec::with_capacity(HG_DEPTH);
        for i in 0..HG_DEPTH {
            let s = self.pre[i].apply(tape, bound, bns, x, 1, mode)?;
            skips.push(s);
            x = self.down[i].apply(tape, bound, bns, s, 2, mode)?;
        }
        x = self.mid.apply(tape, bound, bns, x, 1, mode)?;
        for i in (0..HG_DEPTH).rev() {
            let u = ops::upsample2(tape, x)?;
            let c = self.up[i].apply(tape, bound, bns, u, 1, mode)?;
            x = ops::add(tape, c, skips[i])?;
        }
        Ok(x)
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub bns: BnStates,
    stem: Vec<ConvBn>,
    stacks: Vec<Hourglass>,
    bank_t: Option<ExcitationBank>,
    bank_t1: Option<ExcitationBank>,
    cffs: Vec<CffParams>,
    reduce_w: ParamId,
    reduce_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
}

pub struct ForwardOutput {
    /// [B, 2L] coordinates in crop units.
    pub prediction: Var,
    /// Correlation matrices (last stage, previous stage, fused); absent for
    /// the baseline variant.
    pub q: Option<[Var; 3]>,
    /// Reduced D-channel map before pooling; feeds activation-map export.
    pub head_map: Var,
    /// Per-excitation attention maps at the two tapped stages and after
    /// fusing; absent for the baseline variant.
    pub stages: Option<StageMaps>,
    /// Zero-norm pooled features encountered while normalizing.
    pub degenerate_features: usize,
}

/// The P attended maps per site, all at S/4 resolution.
pub struct StageMaps {
    pub last: Vec<Var>,
    pub prev: Vec<Var>,
    pub fused: Vec<Var>,
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::stream(seed, "model-init");
        let mut store = ParamStore::new();
        let mut bns = BnStates::new();
        let d = config.channels;

        let stem = vec![
            ConvBn::create(&mut store, &mut bns, &mut rng, "stem.0", 1, d / 2, 3)?,
            ConvBn::create(&mut store, &mut bns, &mut rng, "stem.1", d / 2, d, 3)?,
        ];
        let stacks = (0..config.stacks)
            .map(|t| Hourglass::create(&mut store, &mut bns, &mut rng, &format!("hg{t}"), d))
            .collect::<Result<Vec<_>>>()?;

        let (bank_t, bank_t1, cffs) = match config.variant {
            Variant::Baseline => (None, None, Vec::new()),
            variant => {
                let second_order = variant == Variant::Ccdn;
                let p = config.excitations;
                let bt = ExcitationBank::create(&mut store, &mut rng, "ctm_t", d, p, second_order)?;
                let bt1 =
                    ExcitationBank::create(&mut store, &mut rng, "ctm_t1", d, p, second_order)?;
                let cffs = (0..p)
                    .map(|i| {
                        CffParams::create(
                            &mut store,
                            &mut bns,
                            &mut rng,
                            &format!("cff{i}"),
                            d,
                            config.deconv_k,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Some(bt), Some(bt1), cffs)
            }
        };

        let reduce_in = match config.variant {
            Variant::Baseline => d,
            _ => d * config.excitations,
        };
        let reduce_w = store.add(
            "head.reduce.w",
            uniform_fan_in(&mut rng, &[d, reduce_in, 1, 1], reduce_in),
            true,
        )?;
        let reduce_b = store.add("head.reduce.b", Tensor::zeros(&[d]), true)?;
        let fc_w = store.add(
            "head.fc.w",
            uniform_fan_in(&mut rng, &[2 * config.landmarks, d], d),
            true,
        )?;
        let fc_b = store.add("head.fc.b", Tensor::zeros(&[2 * config.landmarks]), true)?;

        Ok(Self {
            config,
            store,
            bns,
            stem,
            stacks,
            bank_t,
            bank_t1,
            cffs,
            reduce_w,
            reduce_b,
            fc_w,
            fc_b,
        })
    }

    /// Trunk: stem then every stack, returning each stack's output map at
    /// S/4 resolution.
    pub fn trunk(
        &mut self,
        tape: &Tape,
        bound: &Bound,
        img: Var,
        mode: Mode,
    ) -> Result<Vec<Var>> {
        let dims = tape.dims(img);
        let s = self.config.input_size;
        if dims.len() != 4 || dims[1] != 1 || dims[2] != s || dims[3] != s {
            return Err(Error::Shape {
                op: "trunk",
                detail: format!("want [B,1,{s},{s}], got {:?}", dims),
            });
        }
        let mut x = self.stem[0].apply(tape, bound, &mut self.bns, img, 2, mode)?;
        x = self.stem[1].apply(tape, bound, &mut self.bns, x, 2, mode)?;
        let mut feats = Vec::with_capacity(self.stacks.len());
        let stacks = self.stacks.clone();
        for hg in &stacks {
            x = hg.apply(tape, bound, &mut self.bns, x, mode)?;
            feats.push(x);
        }
        Ok(feats)
    }

    pub fn forward(
        &mut self,
        tape: &Tape,
        bound: &Bound,
        img: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let feats = self.trunk(tape, bound, img, mode)?;
        let x_t = feats[feats.len() - 1];
        let x_t1 = feats[feats.len() - 2];

        let (merged, q, stages, degenerate) = match self.config.variant {
            Variant::Baseline => (x_t, None, None, 0),
            _ => {
                let bank_t = self.bank_t.as_ref().expect("non-baseline has banks").bind(bound);
                let bank_t1 = self.bank_t1.as_ref().expect("non-baseline has banks").bind(bound);
                let out_t = ctm::ctm_forward(tape, x_t, &bank_t, self.config.ns_iters)?;
                let out_t1 = ctm::ctm_forward(tape, x_t1, &bank_t1, self.config.ns_iters)?;

                let cffs = self.cffs.clone();
                let mut fused = Vec::with_capacity(cffs.len());
                for (i, cff) in cffs.iter().enumerate() {
                    let small = ops::avgpool2(tape, out_t.maps[i])?;
                    let vars = cff.bind(bound);
                    let f = cocs::cff_fuse(
                        tape,
                        small,
                        out_t1.maps[i],
                        &vars,
                        self.bns.get_mut(cff.bn),
                        mode,
                    )?;
                    fused.push(f);
                }

                let mut degenerate = 0;
                let mut qs = Vec::with_capacity(3);
                for maps in [&out_t.maps, &out_t1.maps, &fused] {
                    let (feats, bad) = cocs::pool_normalize(tape, maps)?;
                    degenerate += bad;
                    qs.push(cocs::excitation_correlations(tape, &feats)?);
                }
                let merged = ops::concat_channels(tape, &fused)?;
                let stages = StageMaps { last: out_t.maps, prev: out_t1.maps, fused };
                (merged, Some([qs[0], qs[1], qs[2]]), Some(stages), degenerate)
            }
        };

        let reduced = ops::conv2d(
            tape,
            merged,
            bound.var(self.reduce_w),
            Some(bound.var(self.reduce_b)),
            1,
        )?;
        let pooled = ops::gap(tape, reduced)?;
        let prediction =
            ops::linear(tape, pooled, bound.var(self.fc_w), Some(bound.var(self.fc_b)))?;
        Ok(ForwardOutput {
            prediction,
            q,
            head_map: reduced,
            stages,
            degenerate_features: degenerate,
        })
    }

    /// Channel-mixing weight of the head's 1x1 reduction, [D, D*P, 1, 1]
    /// ([D, D, 1, 1] for baseline).
    pub fn reduce_weight(&self) -> &Tensor {
        self.store.value(self.reduce_w)
    }

    /// Final regression weight, [2L, D].
    pub fn fc_weight(&self) -> &Tensor {
        self.store.value(self.fc_w)
    }
}

pub struct Objective {
    pub total: Var,
    /// Mean squared coordinate residual over the batch.
    pub data_term: Var,
    /// The three decorrelation terms before weighting; zeros for baseline.
    pub q_terms: [f64; 3],
}

/// Mean over the batch of the squared coordinate error, plus the weighted
/// decorrelation terms when correlation matrices are present.
pub fn objective(
    tape: &Tape,
    prediction: Var,
    target: Var,
    q: Option<&[Var; 3]>,
    gammas: (f64, f64, f64),
) -> Result<Objective> {
    let pdims = tape.dims(prediction);
    if pdims != tape.dims(target) || pdims.len() != 2 {
        return Err(Error::Shape {
            op: "objective",
            detail: format!("prediction {:?} vs target {:?}", pdims, tape.dims(target)),
        });
    }
    let b = pdims[0];
    let sq = ops::square(tape, ops::sub(tape, target, prediction)?)?;
    let data_term = ops::scale(tape, ops::sum(tape, sq)?, 1.0 / b as f64)?;
    let (total, q_terms) = match q {
        None => (data_term, [0.0; 3]),
        Some([qt, qt1, qg]) => {
            let losses = cocs::cocs_loss(tape, *qt, *qt1, *qg)?;
            let q_terms = [
                tape.value(losses[0]).item()?,
                tape.value(losses[1]).item()?,
                tape.value(losses[2]).item()?,
            ];
            let mut total = data_term;
            for (l, g) in losses.into_iter().zip([gammas.0, gammas.1, gammas.2]) {
                total = ops::add(tape, total, ops::scale(tape, l, g)?)?;
            }
            (total, q_terms)
        }
    };
    Ok(Objective { total, data_term, q_terms })
}
