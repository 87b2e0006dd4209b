use std::fs;
use std::path::Path;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.bytes.len() as u64,
                msg: format!(
                    "truncated {what}: need {} bytes from offset {}, file has {}",
                    len,
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }
}

/// Loads an IDX image/label file pair (big-endian headers, u8 payloads) and
/// maps pixels affinely onto `[-1, 1]` via `p / 127.5 - 1`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut r = Reader::new(&image_bytes);
    let magic = r.u32_be("image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = r.u32_be("image count")? as usize;
    let height = r.u32_be("image rows")? as usize;
    let width = r.u32_be("image cols")? as usize;
    let pixels_per_image = height * width;
    let payload = r.payload(count * pixels_per_image, "image payload")?;

    let mut l = Reader::new(&label_bytes);
    let magic = l.u32_be("label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = l.u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("label count {label_count} does not match image count {count}"),
        });
    }
    let labels = l.payload(count, "label payload")?.to_vec();

    let data: Vec<f64> = payload.iter().map(|&p| p as f64 / 127.5 - 1.0).collect();
    let images = Matrix::new(count, pixels_per_image, data)?;

    Dataset::new(
        images,
        labels,
        10,
        Provenance {
            source: "mnist-idx".into(),
            normalization: "affine[-1,1]".into(),
            preprocessing: "none".into(),
        },
    )
}

#[cfg(test)]
pub(crate) mod test_support {
    /// Serializes images (u8 pixels) and labels into well-formed IDX byte pairs.
    pub fn encode_idx(images: &[Vec<u8>], height: u32, width: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&super::IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&height.to_be_bytes());
        img.extend_from_slice(&width.to_be_bytes());
        for im in images {
            assert_eq!(im.len(), (height * width) as usize);
            img.extend_from_slice(im);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&super::LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn write_tmp(bytes: &[u8]) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn synthetic_pair_loads_with_pixels_in_range() {
        let images: Vec<Vec<u8>> = (0..10u8).map(|i| vec![i * 20; 4]).collect();
        let labels: Vec<u8> = (0..10).collect();
        let (img, lab) = test_support::encode_idx(&images, 2, 2, &labels);
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let ds = load_mnist_idx(fi.path(), fl.path()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.labels, labels);
        assert!(ds
            .images
            .data()
            .iter()
            .all(|&p| (-1.0..=1.0).contains(&p)));
    }

    #[test]
    fn pixel_endpoints_map_exactly() {
        let (img, lab) = test_support::encode_idx(&[vec![0, 255, 255, 0]], 2, 2, &[7]);
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let ds = load_mnist_idx(fi.path(), fl.path()).unwrap();
        assert_eq!(ds.images.row(0), &[-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn wrong_label_magic_rejected() {
        let (img, _) = test_support::encode_idx(&[vec![0; 4]], 2, 2, &[0]);
        // Image magic where a label magic belongs.
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        lab.extend_from_slice(&1u32.to_be_bytes());
        lab.push(0);
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let err = load_mnist_idx(fi.path(), fl.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let (mut img, lab) = test_support::encode_idx(&[vec![1; 4], vec![2; 4]], 2, 2, &[0, 1]);
        img.truncate(img.len() - 3);
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let err = load_mnist_idx(fi.path(), fl.path()).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, img.len() as u64),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn loading_twice_is_bit_identical() {
        let images: Vec<Vec<u8>> = (0..6u8).map(|i| vec![i, 31 * i, 255 - i, 7]).collect();
        let labels: Vec<u8> = (0..6).collect();
        let (img, lab) = test_support::encode_idx(&images, 2, 2, &labels);
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let a = load_mnist_idx(fi.path(), fl.path()).unwrap();
        let b = load_mnist_idx(fi.path(), fl.path()).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn count_mismatch_between_files_rejected() {
        let (img, _) = test_support::encode_idx(&[vec![0; 4]], 2, 2, &[0]);
        let (_, lab) = test_support::encode_idx(&[vec![0; 4], vec![0; 4]], 2, 2, &[0, 1]);
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let err = load_mnist_idx(fi.path(), fl.path()).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }
}
