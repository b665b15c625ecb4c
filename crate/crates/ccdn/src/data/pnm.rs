//! Binary PGM (P5) and PPM (P6) images, 8-bit only. Tensors are [1,H,W] or
//! [3,H,W] in [0,1]; bytes quantize by rounding, so a save/load round trip
//! moves a value by at most 1/510.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), detail: detail.into() }
}

pub fn save_pnm(path: &Path, img: &Tensor) -> Result<()> {
    let dims = img.dims();
    if dims.len() != 3 || (dims[0] != 1 && dims[0] != 3) {
        return Err(err(path, format!("want [1,H,W] or [3,H,W], got {:?}", dims)));
    }
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    // Channel-planar tensor to interleaved bytes.
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.data()[(ch * h + y) * w + x];
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_pnm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let c = match bytes.get(..2) {
        Some(b"P5") => 1usize,
        Some(b"P6") => 3,
        _ => return Err(err(path, "bad magic (want P5 or P6)")),
    };

    // Header: three whitespace-separated numbers after the magic, with
    // '#' comments running to end of line.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(path, "truncated or non-numeric header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(path, "header number overflows"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(err(path, format!("only 8-bit images supported, maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(err(path, "zero-sized image"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(path, "missing separator before pixel data"));
    }
    pos += 1;

    let want = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| err(path, "header dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < want {
        return Err(err(path, format!("want {want} pixel bytes, found {}", payload.len())));
    }

    let mut data = vec![0.0f64; want];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] =
                    payload[(y * w + x) * c + ch] as f64 / maxval as f64;
            }
        }
    }
    Tensor::new(&[c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_the_pinned_gray_example() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        fs::write(&path, [b"P5\n2 2\n255\n".as_slice(), &[0, 255, 128, 64]].concat()).unwrap();
        let img = load_pnm(&path).unwrap();
        assert_eq!(img.dims(), &[1, 2, 2]);
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn reads_the_pinned_color_example() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let px = [255u8, 0, 0, 0, 255, 0, 0, 0, 255];
        fs::write(&path, [b"P6\n3 1\n255\n".as_slice(), &px].concat()).unwrap();
        let img = load_pnm(&path).unwrap();
        assert_eq!(img.dims(), &[3, 1, 3]);
        // Channel-planar: R plane, G plane, B plane.
        assert_eq!(
            img.data(),
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        fs::write(&p, b"P7\n1 1\n255\n\0").unwrap();
        assert!(load_pnm(&p).is_err());
        fs::write(&p, b"P5\n2 2\n65535\n").unwrap();
        assert!(load_pnm(&p).is_err());
        fs::write(&p, b"P5\n2 2\n255\n\0\0").unwrap();
        assert!(load_pnm(&p).unwrap_err().to_string().contains("want 4"));
        fs::write(&p, b"P5\n99999999999999999999 1\n255\n").unwrap();
        assert!(load_pnm(&p).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, [b"P5\n# made by hand\n1 1\n255\n".as_slice(), &[200]].concat()).unwrap();
        assert_eq!(load_pnm(&p).unwrap().data(), &[200.0 / 255.0]);
    }

    #[test]
    fn random_round_trip_stays_within_quantization() {
        use rand::Rng;
        let mut rng = crate::rng::stream(4, "pnm-roundtrip");
        for c in [1usize, 3] {
            let data: Vec<f64> = (0..c * 5 * 7).map(|_| rng.gen()).collect();
            let img = Tensor::new(&[c, 5, 7], data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.pnm");
            save_pnm(&path, &img).unwrap();
            let back = load_pnm(&path).unwrap();
            assert_eq!(back.dims(), img.dims());
            assert!(img.max_abs_diff(&back) <= 1.0 / 510.0);
        }
    }
}
