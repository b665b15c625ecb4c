//! Landmark annotation files in the 300W convention:
//! ```text
//! version: 1
//! n_points: 3
//! {
//! 1 2
//! 3 4
//! 5 6
//! }
//! ```
//! Coordinates are in image pixels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: format!("line {line}: {}", detail.into()),
    }
}

pub fn save_pts(path: &Path, points: &[[f64; 2]]) -> Result<()> {
    let mut out = format!("version: 1\nn_points: {}\n{{\n", points.len());
    for p in points {
        // Display emits the shortest string that parses back exactly.
        out.push_str(&format!("{} {}\n", p[0], p[1]));
    }
    out.push_str("}\n");
    fs::write(path, out)?;
    Ok(())
}

pub fn load_pts(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (ln, version) = lines.next().ok_or_else(|| err(path, 1, "empty file"))?;
    if version != "version: 1" {
        return Err(err(path, ln, format!("want 'version: 1', got '{version}'")));
    }
    let (ln, count_line) = lines.next().ok_or_else(|| err(path, 2, "missing n_points"))?;
    let n: usize = count_line
        .strip_prefix("n_points:")
        .map(str::trim)
        .ok_or_else(|| err(path, ln, "missing 'n_points:' prefix"))?
        .parse()
        .map_err(|_| err(path, ln, "n_points is not a count"))?;
    let (ln, brace) = lines.next().ok_or_else(|| err(path, 3, "missing '{'"))?;
    if brace != "{" {
        return Err(err(path, ln, format!("want '{{', got '{brace}'")));
    }

    let mut points = Vec::with_capacity(n);
    for (ln, line) in lines.by_ref() {
        if line == "}" {
            if points.len() != n {
                return Err(err(
                    path,
                    ln,
                    format!("n_points says {n}, found {}", points.len()),
                ));
            }
            return Ok(points);
        }
        if points.len() == n {
            return Err(err(path, ln, format!("more than the declared {n} points")));
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>, ln: usize| -> Result<f64> {
            tok.ok_or_else(|| err(path, ln, "want 'x y'"))?
                .parse()
                .map_err(|_| err(path, ln, format!("non-numeric coordinate in '{line}'")))
        };
        let x = parse(it.next(), ln)?;
        let y = parse(it.next(), ln)?;
        if it.next().is_some() {
            return Err(err(path, ln, format!("extra tokens in '{line}'")));
        }
        points.push([x, y]);
    }
    Err(err(path, 0, "unterminated point list (no '}')"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pts");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn reads_the_documented_layout() {
        let (_d, p) = write("version: 1\nn_points: 3\n{\n1 2\n3 4\n5 6\n}\n");
        assert_eq!(load_pts(&p).unwrap(), vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    }

    #[test]
    fn point_count_mismatch_is_an_error_with_line() {
        let mut body = String::from("version: 1\nn_points: 68\n{\n");
        for i in 0..67 {
            body.push_str(&format!("{i} {i}\n"));
        }
        body.push_str("}\n");
        let (_d, p) = write(&body);
        let e = load_pts(&p).unwrap_err().to_string();
        assert!(e.contains("line 71") && e.contains("68"), "{e}");
    }

    #[test]
    fn malformed_pieces_report_their_line() {
        let (_d, p) = write("version: 2\n");
        assert!(load_pts(&p).unwrap_err().to_string().contains("line 1"));
        let (_d, p) = write("version: 1\nn_points: x\n");
        assert!(load_pts(&p).unwrap_err().to_string().contains("line 2"));
        let (_d, p) = write("version: 1\nn_points: 1\n{\n1 banana\n}\n");
        assert!(load_pts(&p).unwrap_err().to_string().contains("line 4"));
        let (_d, p) = write("version: 1\nn_points: 1\n{\n1 2\n");
        assert!(load_pts(&p).is_err());
    }

    #[test]
    fn random_round_trip_is_exact() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "pts-roundtrip");
        let pts: Vec<[f64; 2]> =
            (0..68).map(|_| [rng.gen_range(-50.0..200.0), rng.gen_range(-50.0..200.0)]).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pts");
        save_pts(&path, &pts).unwrap();
        assert_eq!(load_pts(&path).unwrap(), pts);
    }
}
