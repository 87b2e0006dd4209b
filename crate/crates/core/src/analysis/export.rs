//! Raw feature export for external analysis tools (embedding/visualization
//! pipelines that live outside this crate).
//!
//! Layout (little-endian): magic "GALFEAT1", u32 sample count M, u32 feature
//! width N, u32 layer index, M*N f64 features row-major, M u16 labels.

use std::fs;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::features_at;
use crate::trainer::ModelCheckpoint;

const MAGIC: &[u8; 8] = b"GALFEAT1";

/// Pushes the dataset through the frozen blocks and writes the features at
/// `layer` next to the labels.
pub fn export_features(
    ckpt: &ModelCheckpoint,
    ds: &Dataset,
    layer: usize,
    path: &Path,
) -> Result<()> {
    let features = features_at(&ckpt.blocks, &ds.images, layer)?;
    let mut out = Vec::with_capacity(20 + features.data().len() * 8 + ds.labels.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(layer as u32).to_le_bytes());
    for &v in features.data() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    for &label in &ds.labels {
        out.extend_from_slice(&(label as u16).to_le_bytes());
    }
    let tmp = path.with_extension("tmp-feat");
    fs::write(&tmp, &out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a feature export back: `(features, labels, layer)`.
pub fn import_features(path: &Path) -> Result<(Matrix, Vec<u16>, usize)> {
    let bytes = fs::read(path)?;
    let need = |pos: usize, n: usize| -> Result<&[u8]> {
        bytes.get(pos..pos + n).ok_or(Error::Format {
            offset: pos.min(bytes.len()),
            msg: format!("truncated feature file (need {n} bytes at {pos})"),
        })
    };
    if need(0, 8)? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad feature-file magic".into(),
        });
    }
    let u32_at = |pos: usize| -> Result<u32> {
        Ok(u32::from_le_bytes(need(pos, 4)?.try_into().unwrap()))
    };
    let m = u32_at(8)? as usize;
    let n = u32_at(12)? as usize;
    let layer = u32_at(16)? as usize;

    let data_bytes = need(20, m * n * 8)?;
    let data: Vec<f64> = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let label_offset = 20 + m * n * 8;
    let label_bytes = need(label_offset, m * 2)?;
    let labels: Vec<u16> = label_bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if label_offset + m * 2 != bytes.len() {
        return Err(Error::Format {
            offset: label_offset + m * 2,
            msg: "trailing bytes in feature file".into(),
        });
    }
    Ok((Matrix::new(m, n, data)?, labels, layer))
}
