//! Text and image exports of reward, value and Q maps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CinError, Result};
use crate::gridworld::{Action, NUM_ACTIONS};

/// One number per cell, `side` rows of space-separated values.
pub fn matrix_text(values: &[f64], side: usize) -> Result<String> {
    check_len(values, side)?;
    let mut out = String::new();
    for row in values.chunks(side) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Ok(out)
}

/// Min-max normalised 8-bit grayscale pixels, row-major. A constant map
/// renders black.
pub fn grayscale(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn save_png(values: &[f64], side: usize, path: impl AsRef<Path>) -> Result<()> {
    check_len(values, side)?;
    let img = image::GrayImage::from_raw(side as u32, side as u32, grayscale(values))
        .ok_or(CinError::ShapeMismatch {
            expected: side * side,
            found: values.len(),
        })?;
    img.save(path)?;
    Ok(())
}

fn check_len(values: &[f64], side: usize) -> Result<()> {
    if side == 0 || values.len() != side * side {
        return Err(CinError::ShapeMismatch {
            expected: side * side,
            found: values.len(),
        });
    }
    Ok(())
}

/// Writes `<name>.txt` and `<name>.png` into `dir`.
pub fn dump_map(values: &[f64], side: usize, dir: impl AsRef<Path>, name: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let txt = dir.join(format!("{name}.txt"));
    let png = dir.join(format!("{name}.png"));
    fs::write(&txt, matrix_text(values, side)?)?;
    save_png(values, side, &png)?;
    Ok(vec![txt, png])
}

/// Dumps the reward, the value and the Q map of every action
/// (`q` is action-major, `8 * side * side` long).
pub fn dump_planner_maps(
    reward: &[f64],
    v: &[f64],
    q: &[f64],
    side: usize,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let n = side * side;
    if q.len() != NUM_ACTIONS * n {
        return Err(CinError::ShapeMismatch {
            expected: NUM_ACTIONS * n,
            found: q.len(),
        });
    }
    let dir = dir.as_ref();
    let mut written = dump_map(reward, side, dir, "reward")?;
    written.extend(dump_map(v, side, dir, "value")?);
    for a in Action::ALL {
        let i = a.index();
        written.extend(dump_map(&q[i * n..(i + 1) * n], side, dir, &format!("q_{}", a.name()))?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_has_one_row_per_line() {
        let text = matrix_text(&[1.0, 2.5, -0.5, 10.0], 2).unwrap();
        assert_eq!(text, "1 2.5\n-0.5 10\n");
        assert!(matrix_text(&[1.0; 3], 2).is_err());
    }

    #[test]
    fn grayscale_spans_full_range() {
        assert_eq!(grayscale(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
        assert_eq!(grayscale(&[3.0, 3.0]), vec![0, 0]);
    }

    #[test]
    fn png_decodes_to_same_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let values = [0.0, 1.0, 2.0, 3.0];
        let path = dir.path().join("m.png");
        save_png(&values, 2, &path).unwrap();
        let back = image::open(&path).unwrap().to_luma8();
        assert_eq!(back.into_raw(), grayscale(&values));
    }

    #[test]
    fn planner_dump_writes_twenty_files() {
        let dir = tempfile::tempdir().unwrap();
        let n = 9;
        let files = dump_planner_maps(&[0.0; 9], &[1.0; 9], &vec![0.5; 8 * n], 3, dir.path()).unwrap();
        assert_eq!(files.len(), 20);
        assert!(files.iter().all(|f| f.exists()));
    }
}
