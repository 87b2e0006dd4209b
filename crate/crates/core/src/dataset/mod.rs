//! Dataset loading, preprocessing, and batching.
//!
//! Loaders produce flat `M x pixels` matrices with every pixel mapped into
//! `[-1, 1]`; the provenance record carries the source and preprocessing tags
//! so downstream artifacts can state exactly what they were computed from.

mod cifar;
mod fetch;
mod idx;

pub use cifar::load_cifar10_gray;
pub use fetch::{builtin_manifest, fetch_dataset, parse_manifest, ManifestEntry};
pub use idx::load_mnist_idx;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

/// Where a dataset came from and how it was preprocessed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub normalization: String,
    pub preprocessing: String,
}

/// A labeled image collection, flattened to one row per sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<u8>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        images: Matrix,
        labels: Vec<u8>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.len() != images.rows() {
            return Err(Error::Data(format!(
                "label count {} does not match sample count {}",
                labels.len(),
                images.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First `n` samples as a new dataset (for desk-scale subsets).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.select_rows(&indices),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        }
    }

    /// Indices of every sample with the given label.
    pub fn class_indices(&self, class: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One minibatch: rows copied out of the parent dataset.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vec<u8>,
    /// Row indices into the parent dataset (for diagnostics).
    pub indices: Vec<usize>,
}

/// Splits one epoch into shuffled minibatches. Every sample appears exactly
/// once; the final short batch is kept. Pairwise-distance terms need at least
/// two samples, hence the batch-size floor.
pub fn batches(ds: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<Vec<Batch>> {
    batches_with_mode(ds, batch_size, rng, false)
}

/// As [`batches`], optionally interleaving classes so each batch has a near
/// class-balanced composition.
pub fn batches_with_mode(
    ds: &Dataset,
    batch_size: usize,
    rng: &mut Rng,
    stratified: bool,
) -> Result<Vec<Batch>> {
    let chunks = batch_indices(&ds.labels, ds.num_classes, batch_size, rng, stratified)?;
    Ok(chunks
        .into_iter()
        .map(|chunk| Batch {
            x: ds.images.select_rows(&chunk),
            y: chunk.iter().map(|&i| ds.labels[i]).collect(),
            indices: chunk,
        })
        .collect())
}

/// One epoch's shuffled batch composition as index chunks, so callers can
/// gather rows from either raw images or cached features.
pub fn batch_indices(
    labels: &[u8],
    num_classes: usize,
    batch_size: usize,
    rng: &mut Rng,
    stratified: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch_size must be >= 2 (pairwise distances need pairs), got {batch_size}"
        )));
    }
    let n = labels.len();
    let order = if stratified {
        // Shuffle within each class, then round-robin across classes.
        let mut queues: Vec<Vec<usize>> = (0..num_classes)
            .map(|c| {
                labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l as usize == c)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        for q in queues.iter_mut() {
            rng.shuffle(q);
        }
        let mut order = Vec::with_capacity(n);
        let mut cursor = vec![0usize; queues.len()];
        while order.len() < n {
            for (c, q) in queues.iter().enumerate() {
                if cursor[c] < q.len() {
                    order.push(q[cursor[c]]);
                    cursor[c] += 1;
                }
            }
        }
        order
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        order
    };

    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Dataset {
        let images = Matrix::from_fn(n, 4, |r, c| (r * 4 + c) as f64 / 100.0);
        let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        Dataset::new(
            images,
            labels,
            3,
            Provenance {
                source: "toy".into(),
                normalization: "none".into(),
                preprocessing: "none".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_partition_the_dataset() {
        let ds = toy_dataset(10);
        let mut rng = Rng::new(1);
        let bs = batches(&ds, 4, &mut rng).unwrap();
        let sizes: Vec<usize> = bs.iter().map(|b| b.y.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = toy_dataset(17);
        let a = batches(&ds, 5, &mut Rng::new(9)).unwrap();
        let b = batches(&ds, 5, &mut Rng::new(9)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.indices, y.indices);
        }
    }

    #[test]
    fn batches_cover_every_index_once() {
        let ds = toy_dataset(23);
        let bs = batches(&ds, 6, &mut Rng::new(3)).unwrap();
        let mut seen: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_batches_cover_every_index_once() {
        let ds = toy_dataset(23);
        let bs = batches_with_mode(&ds, 6, &mut Rng::new(3), true).unwrap();
        let mut seen: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        // First full batch mixes all three classes.
        let classes: std::collections::HashSet<u8> = bs[0].y.iter().copied().collect();
        assert_eq!(classes.len(), 3);
    }

    #[test]
    fn batch_size_below_two_rejected() {
        let ds = toy_dataset(5);
        assert!(matches!(
            batches(&ds, 1, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mismatched_labels_rejected() {
        let images = Matrix::zeros(4, 2);
        let err = Dataset::new(
            images,
            vec![0, 1],
            2,
            Provenance {
                source: "x".into(),
                normalization: "".into(),
                preprocessing: "".into(),
            },
        );
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
