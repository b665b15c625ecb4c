//! Synthetic landmark benchmark plus file ingestion: parametric face
//! rendering, .pts annotation files, binary PGM/PPM images, and the
//! rotation/scale augmentation used during training.

pub mod augment;
pub mod pnm;
pub mod pts;
pub mod synth;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, crop_resize, warp, AugmentConfig};
pub use pnm::{load_pnm, save_pnm};
pub use pts::{load_pts, save_pts};
pub use synth::{synth_generate, SynthSpec, TEMPLATE};

/// One annotated crop: a grayscale or RGB image in [0,1], L crop-relative
/// landmark coordinates in [0,1], per-landmark visibility, and the
/// normalization distance used by the error metric (inter-ocular analog).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// [C,S,S], C in {1,3}.
    pub image: Tensor,
    pub landmarks: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    pub norm_distance: f64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let dims = self.image.dims();
        if dims.len() != 3 || (dims[0] != 1 && dims[0] != 3) {
            return Err(Error::Config(format!("sample image must be [C,H,W], got {:?}", dims)));
        }
        if self.landmarks.len() != self.visibility.len() {
            return Err(Error::Config("landmark/visibility length mismatch".into()));
        }
        if !self.landmarks.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::Numerics("non-finite landmark".into()));
        }
        if !(self.norm_distance > 0.0) {
            return Err(Error::Config(format!(
                "norm_distance must be positive, got {}",
                self.norm_distance
            )));
        }
        Ok(())
    }
}

/// Stacks selected samples into network inputs: images [B,1,S,S] and
/// interleaved coordinate targets [B,2L] (x0,y0,x1,y1,...).
pub fn batch(samples: &[Sample], indices: &[usize]) -> Result<(Tensor, Tensor)> {
    if indices.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let first = &samples[indices[0]];
    let dims = first.image.dims();
    let l = first.landmarks.len();
    let (c, s) = (dims[0], dims[1]);
    let mut imgs = Vec::with_capacity(indices.len() * first.image.len());
    let mut tgts = Vec::with_capacity(indices.len() * 2 * l);
    for &i in indices {
        let sm = &samples[i];
        if sm.image.dims() != dims || sm.landmarks.len() != l {
            return Err(Error::Config(format!("sample {i} disagrees with batch shape")));
        }
        imgs.extend_from_slice(sm.image.data());
        for p in &sm.landmarks {
            tgts.push(p[0]);
            tgts.push(p[1]);
        }
    }
    Ok((
        Tensor::new(&[indices.len(), c, s, dims[2]], imgs)?,
        Tensor::new(&[indices.len(), 2 * l], tgts)?,
    ))
}

/// Writes a dataset directory: one PGM and one .pts file per sample plus a
/// manifest CSV. Per-landmark visibility is summarized as a count; it is
/// split-construction metadata, not a training signal.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("index,path_img,path_pts,norm_distance,visible_count\n");
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        let img_name = format!("img_{i:05}.pgm");
        let pts_name = format!("img_{i:05}.pts");
        pnm::save_pnm(&dir.join(&img_name), &s.image)?;
        // Landmarks persist in image-pixel units per the annotation format.
        let side = s.image.dims()[2] as f64;
        let px: Vec<[f64; 2]> =
            s.landmarks.iter().map(|p| [p[0] * side, p[1] * side]).collect();
        pts::save_pts(&dir.join(&pts_name), &px)?;
        let visible = s.visibility.iter().filter(|&&v| v).count();
        manifest.push_str(&format!(
            "{i},{img_name},{pts_name},{},{visible}\n",
            s.norm_distance
        ));
    }
    let mut f = fs::File::create(dir.join("manifest.csv"))?;
    f.write_all(manifest.as_bytes())?;
    Ok(())
}

/// Reads a dataset directory written by [`save_dataset`]. Visibility flags
/// are not persisted per landmark; loaded samples report all-visible.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join("manifest.csv");
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err(&path, "empty manifest"))?;
    if header != "index,path_img,path_pts,norm_distance,visible_count" {
        return Err(fmt_err(&path, format!("unexpected header: {header}")));
    }
    let mut samples = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(fmt_err(&path, format!("line {}: want 5 columns", ln + 1)));
        }
        let image = pnm::load_pnm(&dir.join(cols[1]))?;
        let px = pts::load_pts(&dir.join(cols[2]))?;
        let side = image.dims()[2] as f64;
        let landmarks: Vec<[f64; 2]> = px.iter().map(|p| [p[0] / side, p[1] / side]).collect();
        let norm_distance: f64 = cols[3]
            .parse()
            .map_err(|_| fmt_err(&path, format!("line {}: bad norm_distance", ln + 1)))?;
        let n = landmarks.len();
        samples.push(Sample { image, landmarks, visibility: vec![true; n], norm_distance });
    }
    Ok(samples)
}

fn fmt_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), detail: detail.into() }
}
