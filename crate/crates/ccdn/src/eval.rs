//! Metrics and diagnostics: normalized mean error, failure rate, cumulative
//! error distribution curves, and class-activation-map export.
//!
//! Boundary conventions, fixed and tested here: an image FAILS when its
//! error is strictly greater than the threshold ("more than 10%"); a CED
//! point counts images with error less than or equal to its threshold.

use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ops::Mode;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// An image counts as a detection failure above this error.
pub const FAILURE_THRESHOLD: f64 = 0.10;

/// Mean over landmarks of the Euclidean coordinate error, divided by the
/// normalization distance. `pred` and `gt` are interleaved (x0,y0,x1,y1,...).
pub fn nme(pred: &[f64], gt: &[f64], norm_distance: f64) -> Result<f64> {
    if !(norm_distance > 0.0) {
        return Err(Error::Config(format!(
            "norm_distance must be positive, got {norm_distance}"
        )));
    }
    if pred.len() != gt.len() || pred.len() % 2 != 0 || pred.is_empty() {
        return Err(Error::Shape {
            op: "nme",
            detail: format!("want equal even lengths, got {} vs {}", pred.len(), gt.len()),
        });
    }
    let l = pred.len() / 2;
    let mut total = 0.0;
    for i in 0..l {
        let dx = pred[2 * i] - gt[2 * i];
        let dy = pred[2 * i + 1] - gt[2 * i + 1];
        total += (dx * dx + dy * dy).sqrt();
    }
    Ok(total / l as f64 / norm_distance)
}

/// Fraction of images whose error strictly exceeds `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    if nmes.is_empty() {
        return Err(Error::Config("failure rate of an empty list".into()));
    }
    Ok(nmes.iter().filter(|&&e| e > threshold).count() as f64 / nmes.len() as f64)
}

/// Cumulative error distribution: for `steps` thresholds evenly spaced over
/// [0, max_threshold], the fraction of images with error <= t.
pub fn ced_curve(nmes: &[f64], max_threshold: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    if steps < 2 {
        return Err(Error::Config(format!("CED needs at least 2 steps, got {steps}")));
    }
    if nmes.is_empty() {
        return Err(Error::Config("CED of an empty list".into()));
    }
    if !(max_threshold > 0.0) {
        return Err(Error::Config(format!("bad CED range {max_threshold}")));
    }
    let n = nmes.len() as f64;
    Ok((0..steps)
        .map(|i| {
            let t = max_threshold * i as f64 / (steps - 1) as f64;
            (t, nmes.iter().filter(|&&e| e <= t).count() as f64 / n)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_image: Vec<f64>,
    pub mean_nme: f64,
    pub failure_rate: f64,
    pub ced: Vec<(f64, f64)>,
}

/// Aggregates per-image errors. The CED range extends to the worst error
/// (at least the failure threshold), so every curve ends at 1.0.
pub fn summarize(per_image: Vec<f64>, ced_steps: usize) -> Result<EvalResult> {
    let worst = per_image.iter().copied().fold(0.0f64, f64::max);
    let ced = ced_curve(&per_image, worst.max(FAILURE_THRESHOLD), ced_steps)?;
    debug_assert!(ced.windows(2).all(|w| w[0].1 <= w[1].1));
    Ok(EvalResult {
        mean_nme: per_image.iter().sum::<f64>() / per_image.len() as f64,
        failure_rate: failure_rate(&per_image, FAILURE_THRESHOLD)?,
        ced,
        per_image,
    })
}

/// Per-image errors of a model over a sample set, batched eval-mode
/// forwards, no gradient tracking.
pub fn model_nmes(model: &mut Model, samples: &[Sample], batch_size: usize) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::Config("zero batch size".into()));
    }
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in indices.chunks(batch_size) {
        let (imgs, _) = data::batch(samples, chunk)?;
        let tape = Tape::new();
        let bound = model.store.bind_frozen(&tape);
        let img = tape.constant(imgs);
        let fwd = model.forward(&tape, &bound, img, Mode::Eval)?;
        let pred = tape.value(fwd.prediction);
        let width = pred.dims()[1];
        for (row, &si) in chunk.iter().enumerate() {
            let s = &samples[si];
            let gt: Vec<f64> = s.landmarks.iter().flat_map(|p| [p[0], p[1]]).collect();
            out.push(nme(&pred.data()[row * width..(row + 1) * width], &gt, s.norm_distance)?);
        }
    }
    Ok(out)
}

/// Which attention site an activation map reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Final stack.
    Last,
    /// Second-to-last stack.
    Prev,
    /// After fusing.
    Fused,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(Self::Last),
            "t1" => Ok(Self::Prev),
            "g" => Ok(Self::Fused),
            other => Err(Error::Config(format!(
                "unknown stage '{other}' (expected t, t1, or g)"
            ))),
        }
    }
}

/// Class-activation map of excitation block `p` at the chosen stage for one
/// [1,S,S] image: for each of the 2L coordinate outputs, the map channels
/// are mixed by the head weights composed through the 1x1 reduction
/// (restricted to block p's channel slice), upscaled bilinearly to the input
/// resolution; the 2L maps are averaged and min-max normalized to [0,1].
/// A constant map (zero range) normalizes to all zeros.
pub fn activation_map(model: &mut Model, image: &Tensor, stage: Stage, p: usize) -> Result<Tensor> {
    let s = model.config.input_size;
    if image.dims() != [1, s, s] {
        return Err(Error::Shape {
            op: "activation_map",
            detail: format!("want [1,{s},{s}], got {:?}", image.dims()),
        });
    }
    if p >= model.config.excitations {
        return Err(Error::Config(format!(
            "excitation index {p} out of range (P = {})",
            model.config.excitations
        )));
    }
    let d = model.config.channels;
    let tape = Tape::new();
    let bound = model.store.bind_frozen(&tape);
    let img = tape.constant(image.reshaped(&[1, 1, s, s])?);
    let fwd = model.forward(&tape, &bound, img, Mode::Eval)?;
    let stages = fwd
        .stages
        .ok_or_else(|| Error::Config("the baseline variant has no attention stages".into()))?;
    let map = match stage {
        Stage::Last => stages.last[p],
        Stage::Prev => stages.prev[p],
        Stage::Fused => stages.fused[p],
    };
    let feat = tape.value(map);
    let fdims = feat.dims().to_vec();
    let (h, w) = (fdims[2], fdims[3]);

    // Effective per-channel weight for coordinate j over block p's slice of
    // the concatenated maps: fc[j,:] composed with reduce[:, p*D + c].
    let fc = model.fc_weight().clone();
    let reduce = model.reduce_weight().clone();
    let coords = fc.dims()[0];
    let mut acc = Tensor::zeros(&[1, s, s]);
    for j in 0..coords {
        let mut cam = vec![0.0; h * w];
        for c in 0..d {
            let mut weight = 0.0;
            for k in 0..d {
                weight += fc.data()[j * d + k] * reduce.data()[k * reduce.dims()[1] + p * d + c];
            }
            let plane = &feat.data()[c * h * w..(c + 1) * h * w];
            for (o, v) in cam.iter_mut().zip(plane) {
                *o += weight * v;
            }
        }
        let coarse = Tensor::new(&[1, h, w], cam)?;
        let fine = data::augment::resample(&coarse, s, s, |x, y| {
            ((x + 0.5) * w as f64 / s as f64 - 0.5, (y + 0.5) * h as f64 / s as f64 - 0.5)
        });
        for (a, v) in acc.data_mut().iter_mut().zip(fine.data()) {
            *a += v / coords as f64;
        }
    }

    let (lo, hi) = acc
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        for v in acc.data_mut() {
            *v = (*v - lo) / range;
        }
    } else {
        for v in acc.data_mut() {
            *v = 0.0;
        }
    }
    Ok(acc)
}
