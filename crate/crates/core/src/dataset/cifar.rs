use std::fs;
use std::path::Path;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const RECORD_BYTES: usize = 3073; // label + 3 * 1024 channel bytes
const SRC_SIDE: usize = 32;
const DST_SIDE: usize = 28;

// ITU-R BT.601 luminance weights.
const R_WEIGHT: f64 = 0.299;
const G_WEIGHT: f64 = 0.587;
const B_WEIGHT: f64 = 0.114;

/// Loads CIFAR-10 binary batch files, converting each record to a grayscale
/// 28x28 image: BT.601 luminance, corner-aligned bilinear downsample from
/// 32x32, then the same `[-1, 1]` pixel normalization as the IDX loader.
pub fn load_cifar10_gray(batch_paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();

    for path in batch_paths {
        let bytes = fs::read(path.as_ref())?;
        if bytes.len() % RECORD_BYTES != 0 {
            return Err(Error::Parse {
                offset: (bytes.len() / RECORD_BYTES * RECORD_BYTES) as u64,
                msg: format!(
                    "{}: file length {} is not a multiple of the {}-byte record size",
                    path.as_ref().display(),
                    bytes.len(),
                    RECORD_BYTES
                ),
            });
        }
        for record in bytes.chunks_exact(RECORD_BYTES) {
            let label = record[0];
            if label > 9 {
                return Err(Error::Parse {
                    offset: 0,
                    msg: format!("label byte {label} out of range 0..=9"),
                });
            }
            let gray = grayscale(&record[1..]);
            let small = bilinear_downsample(&gray);
            rows.extend(small.iter().map(|&v| v / 127.5 - 1.0));
            labels.push(label);
        }
    }

    let count = labels.len();
    let images = Matrix::new(count, DST_SIDE * DST_SIDE, rows)?;
    Dataset::new(
        images,
        labels,
        10,
        Provenance {
            source: "cifar10-binary".into(),
            normalization: "affine[-1,1]".into(),
            preprocessing: "gray-bt601+bilinear28".into(),
        },
    )
}

fn grayscale(channels: &[u8]) -> Vec<f64> {
    let plane = SRC_SIDE * SRC_SIDE;
    (0..plane)
        .map(|i| {
            R_WEIGHT * channels[i] as f64
                + G_WEIGHT * channels[plane + i] as f64
                + B_WEIGHT * channels[2 * plane + i] as f64
        })
        .collect()
}

/// Corner-aligned bilinear 32x32 -> 28x28: output pixel (r, c) samples the
/// source at (r, c) * 31/27.
fn bilinear_downsample(src: &[f64]) -> Vec<f64> {
    let ratio = (SRC_SIDE - 1) as f64 / (DST_SIDE - 1) as f64;
    let mut out = Vec::with_capacity(DST_SIDE * DST_SIDE);
    for r in 0..DST_SIDE {
        let sy = r as f64 * ratio;
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(SRC_SIDE - 1);
        let fy = sy - y0 as f64;
        for c in 0..DST_SIDE {
            let sx = c as f64 * ratio;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(SRC_SIDE - 1);
            let fx = sx - x0 as f64;
            let top = (1.0 - fx) * src[y0 * SRC_SIDE + x0] + fx * src[y0 * SRC_SIDE + x1];
            let bottom = (1.0 - fx) * src[y1 * SRC_SIDE + x0] + fx * src[y1 * SRC_SIDE + x1];
            out.push((1.0 - fy) * top + fy * bottom);
        }
    }
    out
}
