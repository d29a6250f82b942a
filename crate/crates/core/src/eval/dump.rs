//! Image-style comparison dumps: true, predicted, and absolute-error
//! matrices as CSV plus 8-bit portable graymaps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::EvalError;
use crate::tensor::Tensor;

/// Writes six files next to `prefix`:
/// `<prefix>_true.csv`, `<prefix>_pred.csv`, `<prefix>_err.csv` and the
/// corresponding `.pgm` graymaps.
///
/// The true and predicted images share one linear gray mapping over their
/// combined `[min, max]` so they are visually comparable; the error image is
/// mapped over `[0, max |error|]`. A degenerate range renders all black.
/// CSV cells round-trip: re-parsing reproduces the matrix exactly.
pub fn dump_comparison(truth: &Tensor, pred: &Tensor, prefix: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if truth.rank() != 2 {
        return Err(EvalError::NotAMatrix {
            shape: truth.shape().to_vec(),
        });
    }
    if truth.shape() != pred.shape() {
        return Err(EvalError::ShapeMismatch {
            lhs: truth.shape().to_vec(),
            rhs: pred.shape().to_vec(),
        });
    }
    let (rows, cols) = (truth.shape()[0], truth.shape()[1]);
    let error: Vec<f64> = truth
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&t, &p)| (t - p).abs())
        .collect();

    let shared_min = truth
        .data()
        .iter()
        .chain(pred.data())
        .copied()
        .fold(f64::INFINITY, f64::min);
    let shared_max = truth
        .data()
        .iter()
        .chain(pred.data())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let err_max = error.iter().copied().fold(0.0, f64::max);

    let with_suffix = |suffix: &str| {
        let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(suffix);
        prefix.with_file_name(name)
    };

    let mut written = Vec::new();
    for (suffix, data) in [
        ("_true.csv", truth.data()),
        ("_pred.csv", pred.data()),
        ("_err.csv", &error[..]),
    ] {
        let path = with_suffix(suffix);
        write_csv(&path, data, rows, cols)?;
        written.push(path);
    }
    for (suffix, data, lo, hi) in [
        ("_true.pgm", truth.data(), shared_min, shared_max),
        ("_pred.pgm", pred.data(), shared_min, shared_max),
        ("_err.pgm", &error[..], 0.0, err_max),
    ] {
        let path = with_suffix(suffix);
        write_pgm(&path, data, rows, cols, lo, hi)?;
        written.push(path);
    }
    Ok(written)
}

fn write_csv(path: &Path, data: &[f64], rows: usize, cols: usize) -> Result<(), EvalError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                write!(out, ",")?;
            }
            write!(out, "{}", data[r * cols + c])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Binary 8-bit PGM ("P5"): value `lo` maps to pixel 0 and `hi` to 255.
fn write_pgm(path: &Path, data: &[f64], rows: usize, cols: usize, lo: f64, hi: f64) -> Result<(), EvalError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    let range = hi - lo;
    let pixels: Vec<u8> = data
        .iter()
        .map(|&v| {
            if range <= 0.0 {
                0u8
            } else {
                (((v - lo) / range * 255.0).round().clamp(0.0, 255.0)) as u8
            }
        })
        .collect();
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_csv_matrix(path: &Path) -> Vec<Vec<f64>> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    }

    fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
        let bytes = std::fs::read(path).unwrap();
        let header_end = bytes
            .windows(1)
            .enumerate()
            .filter(|(_, w)| w[0] == b'\n')
            .map(|(i, _)| i)
            .nth(2)
            .unwrap();
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        let mut lines = header.lines();
        assert_eq!(lines.next(), Some("P5"));
        let dims: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(lines.next(), Some("255"));
        (dims[1], dims[0], bytes[header_end + 1..].to_vec())
    }

    #[test]
    fn identical_matrices_give_an_all_black_error_image() {
        let dir = tempfile::tempdir().unwrap();
        let m = Tensor::new(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let files = dump_comparison(&m, &m, &dir.path().join("snap")).unwrap();
        assert_eq!(files.len(), 6);
        let (rows, cols, pixels) = read_pgm(&dir.path().join("snap_err.pgm"));
        assert_eq!((rows, cols), (3, 4));
        assert!(pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let truth = Tensor::new(vec![2, 3], vec![1.5, 0.333333333333333, 60.0, 59.125, 2e-7, 88.8]).unwrap();
        let pred = Tensor::new(vec![2, 3], vec![1.0, 0.5, 61.0, 58.0, 0.0, 90.0]).unwrap();
        dump_comparison(&truth, &pred, &dir.path().join("x")).unwrap();
        let back = read_csv_matrix(&dir.path().join("x_true.csv"));
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(back[r][c], truth.at2(r, c));
            }
        }
    }

    #[test]
    fn gray_endpoints_map_to_zero_and_full() {
        let dir = tempfile::tempdir().unwrap();
        let truth = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let pred = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        dump_comparison(&truth, &pred, &dir.path().join("g")).unwrap();
        let (_, _, pixels) = read_pgm(&dir.path().join("g_true.pgm"));
        assert_eq!(pixels[0], 0);
        assert_eq!(pixels[2], 255);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            dump_comparison(&a, &b, &dir.path().join("bad")),
            Err(EvalError::ShapeMismatch { .. })
        ));
    }
}
