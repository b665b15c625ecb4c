//! Geometric augmentation: rotation and scale about the crop center with
//! bilinear resampling, plus box crop-and-resize. Landmarks move through the
//! same affine map as the pixels.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Std dev of the rotation angle, radians.
    pub rotation_sigma: f64,
    /// Std dev of the multiplicative scale around 1.
    pub scale_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotation_sigma: 15.0f64.to_radians(), scale_sigma: 0.05 }
    }
}

/// Edge-clamped bilinear read at fractional pixel coordinates. Integer
/// coordinates return the stored value bit-exactly.
fn bilinear(data: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
    let (xa, xb) = (clamp(x0, w), clamp(x0 + 1.0, w));
    let (ya, yb) = (clamp(y0, h), clamp(y0 + 1.0, h));
    let v00 = data[ya * w + xa];
    let v01 = data[ya * w + xb];
    let v10 = data[yb * w + xa];
    let v11 = data[yb * w + xb];
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Resamples every channel of `img` through `map`, which takes output pixel
/// coordinates to source pixel coordinates.
pub(crate) fn resample(
    img: &Tensor,
    out_h: usize,
    out_w: usize,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> Tensor {
    let dims = img.dims();
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..out_h {
            for x in 0..out_w {
                let (sx, sy) = map(x as f64, y as f64);
                out[(ch * out_h + y) * out_w + x] = bilinear(plane, h, w, sx, sy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out).expect("resampled values are finite")
}

/// Rotates by `theta` and scales by `scale` about the crop center (0.5, 0.5).
/// Landmarks map as p' = c + scale * R(theta) (p - c); the image is pulled
/// back through the inverse map; norm_distance scales by `scale`.
pub fn warp(sample: &Sample, theta: f64, scale: f64) -> Result<Sample> {
    if !(scale > 0.0) || !theta.is_finite() {
        return Err(Error::Config(format!("bad warp parameters theta={theta} scale={scale}")));
    }
    let (ct, st) = (theta.cos(), theta.sin());
    let landmarks: Vec<[f64; 2]> = sample
        .landmarks
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
            [0.5 + scale * (ct * dx - st * dy), 0.5 + scale * (st * dx + ct * dy)]
        })
        .collect();

    let dims = sample.image.dims();
    let (h, w) = (dims[1], dims[2]);
    // Crop center in pixel coordinates; dst -> src is the inverse affine.
    let (cx, cy) = (w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5);
    let image = resample(&sample.image, h, w, |x, y| {
        let (dx, dy) = ((x - cx) / scale, (y - cy) / scale);
        (cx + ct * dx + st * dy, cy - st * dx + ct * dy)
    });
    Ok(Sample {
        image,
        landmarks,
        visibility: sample.visibility.clone(),
        norm_distance: sample.norm_distance * scale,
    })
}

/// Random rotation/scale augmentation. Draw order: angle, then scale
/// (1 + Gaussian, clamped to [0.5, 2]).
pub fn augment(sample: &Sample, rng: &mut impl Rng, config: &AugmentConfig) -> Result<Sample> {
    let rot = Normal::new(0.0, config.rotation_sigma)
        .map_err(|e| Error::Config(format!("rotation distribution: {e}")))?;
    let sc = Normal::new(0.0, config.scale_sigma)
        .map_err(|e| Error::Config(format!("scale distribution: {e}")))?;
    let theta = rot.sample(rng);
    let scale = (1.0 + sc.sample(rng)).clamp(0.5, 2.0);
    warp(sample, theta, scale)
}

/// Crops the crop-relative box [x0, y0, width, height] and resizes to
/// size x size. Landmarks rescale to the new crop's unit coordinates;
/// norm_distance divides by the geometric mean of the box sides (the two
/// axes may scale differently; distances get the isotropic compromise).
pub fn crop_resize(sample: &Sample, bbox: [f64; 4], size: usize) -> Result<Sample> {
    let [x0, y0, bw, bh] = bbox;
    if !(bw > 0.0) || !(bh > 0.0) {
        return Err(Error::Config(format!("empty crop box {bbox:?}")));
    }
    if size == 0 {
        return Err(Error::Config("zero output size".into()));
    }
    let dims = sample.image.dims();
    let (h, w) = (dims[1], dims[2]);
    // Factored so the full box at the native size is an exact identity.
    let sx = bw * w as f64 / size as f64;
    let sy = bh * h as f64 / size as f64;
    let image = resample(&sample.image, size, size, |x, y| {
        (x0 * w as f64 + (x + 0.5) * sx - 0.5, y0 * h as f64 + (y + 0.5) * sy - 0.5)
    });
    let landmarks: Vec<[f64; 2]> =
        sample.landmarks.iter().map(|p| [(p[0] - x0) / bw, (p[1] - y0) / bh]).collect();
    Ok(Sample {
        image,
        landmarks,
        visibility: sample.visibility.clone(),
        norm_distance: sample.norm_distance / (bw * bh).sqrt(),
    })
}
