//! Hebbian energy model over hidden representations.
//!
//! For a chosen layer, class prototypes are formed by summing the hidden
//! representations of sampled training items per class. The coupling is the
//! Hebbian outer-product sum `J = (1/N) sum_mu s_mu s_mu^T`; the energy of a
//! representation is the negative quadratic form `-h^T J h`, evaluated via
//! the class sums in O(N*C) without materializing J.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::network::features_at;
use crate::trainer::ModelCheckpoint;

/// Per-layer coupling in class-sum form.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldModel {
    pub layer: usize,
    /// Hidden width N (the 1/N prefactor of the coupling).
    pub width: usize,
    /// One row per class: s_mu = sum of sampled representations.
    pub class_sums: Matrix,
    /// Training samples drawn per class.
    pub samples_per_class: usize,
}

impl HopfieldModel {
    pub fn num_classes(&self) -> usize {
        self.class_sums.rows()
    }

    /// Materializes `J = (1/N) sum_mu s_mu s_mu^T` (tests and small widths;
    /// energy evaluation never needs it).
    pub fn coupling(&self) -> Matrix {
        let n = self.width;
        let mut j = Matrix::zeros(n, n);
        for mu in 0..self.num_classes() {
            let s = self.class_sums.row(mu);
            for a in 0..n {
                if s[a] == 0.0 {
                    continue;
                }
                let row = j.row_mut(a);
                for b in 0..n {
                    row[b] += s[a] * s[b] / n as f64;
                }
            }
        }
        j
    }

    /// `E = -h^T J h = -(1/N) sum_mu (s_mu . h)^2`.
    pub fn energy(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.width {
            return Err(Error::dim(
                "hopfield_energy",
                (1, h.len()),
                (1, self.width),
            ));
        }
        let mut total = 0.0;
        for mu in 0..self.num_classes() {
            let dot: f64 = self.class_sums.row(mu).iter().zip(h).map(|(&s, &v)| s * v).sum();
            total += dot * dot;
        }
        Ok(-total / self.width as f64)
    }

    /// Class overlaps `m_mu = (1/N) s_mu . h`; the energy decomposes as
    /// `E = -N * sum_mu m_mu^2`.
    pub fn overlaps(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.width {
            return Err(Error::dim(
                "hopfield_overlaps",
                (1, h.len()),
                (1, self.width),
            ));
        }
        Ok((0..self.num_classes())
            .map(|mu| {
                self.class_sums.row(mu).iter().zip(h).map(|(&s, &v)| s * v).sum::<f64>()
                    / self.width as f64
            })
            .collect())
    }
}

/// Builds the coupling at `layer` from `n_mu` seeded training samples per
/// class, pushed through the frozen blocks.
pub fn build_hopfield(
    ckpt: &ModelCheckpoint,
    ds_train: &Dataset,
    layer: usize,
    n_mu: usize,
    rng: &mut Rng,
) -> Result<HopfieldModel> {
    ckpt.check_layer(layer)?;
    if n_mu == 0 {
        return Err(Error::Config("n_mu must be >= 1".into()));
    }

    let classes = ds_train.num_classes;
    let mut selected = Vec::with_capacity(classes * n_mu);
    for c in 0..classes {
        let mut indices = ds_train.class_indices(c as u8);
        if indices.len() < n_mu {
            return Err(Error::Data(format!(
                "class {c} has only {} samples, need {n_mu}",
                indices.len()
            )));
        }
        rng.shuffle(&mut indices);
        selected.extend_from_slice(&indices[..n_mu]);
    }

    let inputs = ds_train.images.select_rows(&selected);
    let features = features_at(&ckpt.blocks, &inputs, layer)?;
    let width = features.cols();

    let mut class_sums = Matrix::zeros(classes, width);
    for (i, _) in selected.iter().enumerate() {
        let class = i / n_mu;
        let row = features.row(i);
        let sums = class_sums.row_mut(class);
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }

    Ok(HopfieldModel {
        layer,
        width,
        class_sums,
        samples_per_class: n_mu,
    })
}

/// Energy and norm of one test sample, with min-max normalized companions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub sample: usize,
    pub class: u8,
    pub layer: usize,
    pub energy: f64,
    pub l2_norm: f64,
    pub normalized_energy: f64,
    pub normalized_l2: f64,
}

/// Energy/norm records for every test sample of the selected classes, with
/// both fields min-max normalized to [0, 1] across the record set. A
/// degenerate set (single record or constant field) normalizes to 0.
pub fn energy_scatter(
    ckpt: &ModelCheckpoint,
    ds_test: &Dataset,
    layer: usize,
    classes: &[u8],
    model: &HopfieldModel,
) -> Result<Vec<EnergyRecord>> {
    if model.layer != layer {
        return Err(Error::Config(format!(
            "model was built at layer {}, scatter requested at layer {layer}",
            model.layer
        )));
    }
    if classes.is_empty() {
        return Err(Error::Config("class selection is empty".into()));
    }
    let selected: Vec<usize> = ds_test
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| classes.contains(l))
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "no test samples in classes {classes:?}"
        )));
    }

    let inputs = ds_test.images.select_rows(&selected);
    let features = features_at(&ckpt.blocks, &inputs, layer)?;

    let mut records = Vec::with_capacity(selected.len());
    for (row, &sample) in selected.iter().enumerate() {
        let h = features.row(row);
        let energy = model.energy(h)?;
        let l2_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        records.push(EnergyRecord {
            sample,
            class: ds_test.labels[sample],
            layer,
            energy,
            l2_norm,
            normalized_energy: 0.0,
            normalized_l2: 0.0,
        });
    }

    normalize_field(&mut records, |r| r.energy, |r, v| r.normalized_energy = v);
    normalize_field(&mut records, |r| r.l2_norm, |r, v| r.normalized_l2 = v);
    Ok(records)
}

fn normalize_field(
    records: &mut [EnergyRecord],
    get: impl Fn(&EnergyRecord) -> f64,
    set: impl Fn(&mut EnergyRecord, f64),
) {
    let min = records.iter().map(&get).fold(f64::INFINITY, f64::min);
    let max = records.iter().map(&get).fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    for r in records.iter_mut() {
        let v = if span > 0.0 { (get(r) - min) / span } else { 0.0 };
        set(r, v);
    }
}

/// `|mean_a - mean_b| / sqrt(var_a + var_b)` between two scalar samples
/// (population variances).
pub fn fisher_separation(a: &[f64], b: &[f64]) -> f64 {
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    (ma - mb).abs() / (va + vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::blobs;
    use crate::trainer::{train_layerwise, TrainConfig};

    fn unit_model(class_sums: Matrix) -> HopfieldModel {
        HopfieldModel {
            layer: 0,
            width: class_sums.cols(),
            class_sums,
            samples_per_class: 1,
        }
    }

    #[test]
    fn single_pattern_coupling_by_hand() {
        // One class, one pattern e1 in R^4: J = (1/4) e1 e1^T.
        let sums = Matrix::new(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let model = unit_model(sums);
        let j = model.coupling();
        assert_eq!(j.get(0, 0), 0.25);
        for idx in 1..16 {
            assert_eq!(j.data()[idx], 0.0);
        }
        assert_eq!(model.energy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), -0.25);
    }

    #[test]
    fn orthogonal_input_has_zero_energy() {
        let sums = Matrix::new(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let model = unit_model(sums);
        assert_eq!(model.energy(&[0.0, 0.0, 3.0, -2.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_vector_has_zero_overlaps() {
        let sums = Matrix::new(3, 5, (0..15).map(|i| i as f64).collect()).unwrap();
        let model = unit_model(sums);
        assert_eq!(model.overlaps(&[0.0; 5]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    fn trained() -> (crate::dataset::Dataset, ModelCheckpoint) {
        let ds = blobs(30, 120, 10, 3, 0.3);
        let mut cfg = TrainConfig::new(vec![10, 14, 14], 3, vec![1.5, 1.8], vec![0.7, 0.7]);
        cfg.epochs_per_block = 3;
        cfg.batch_size = 12;
        cfg.seed = 23;
        let ckpt = train_layerwise(&ds, &cfg).unwrap();
        (ds, ckpt)
    }

    #[test]
    fn built_coupling_is_symmetric_and_psd() {
        let (ds, ckpt) = trained();
        let model = build_hopfield(&ckpt, &ds, 1, 5, &mut Rng::new(3)).unwrap();
        let j = model.coupling();
        for a in 0..j.rows() {
            for b in 0..a {
                assert!((j.get(a, b) - j.get(b, a)).abs() < 1e-12);
            }
        }
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let h = rng.gaussian_matrix(1, model.width, 0.0, 1.0);
            let jh = j.matmul(&h.transpose()).unwrap();
            let quad: f64 = h.row(0).iter().zip(jh.data()).map(|(&a, &b)| a * b).sum();
            assert!(quad >= -1e-9 * j.frobenius_norm(), "quadratic form {quad}");
            // Energy through class sums equals the explicit quadratic form.
            let e = model.energy(h.row(0)).unwrap();
            assert!((e + quad).abs() < 1e-9 * quad.abs().max(1.0));
        }
    }

    #[test]
    fn energy_overlap_identity() {
        let (ds, ckpt) = trained();
        let model = build_hopfield(&ckpt, &ds, 0, 6, &mut Rng::new(4)).unwrap();
        let mut rng = Rng::new(91);
        for _ in 0..50 {
            let h = rng.gaussian_matrix(1, model.width, 0.0, 1.0);
            let e = model.energy(h.row(0)).unwrap();
            let overlap_sum: f64 = model
                .overlaps(h.row(0))
                .unwrap()
                .iter()
                .map(|m| m * m)
                .sum();
            let identity = -(model.width as f64) * overlap_sum;
            assert!(
                (e - identity).abs() <= 1e-10 * e.abs().max(1e-300),
                "E {e} vs -N sum m^2 {identity}"
            );
            assert!(e <= 0.0);
        }
    }

    #[test]
    fn prototype_direction_maximizes_its_own_overlap() {
        let (ds, ckpt) = trained();
        let model = build_hopfield(&ckpt, &ds, 1, 8, &mut Rng::new(6)).unwrap();
        for mu in 0..model.num_classes() {
            let s = model.class_sums.row(mu).to_vec();
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            let unit: Vec<f64> = s.iter().map(|v| v / norm).collect();
            let overlaps = model.overlaps(&unit).unwrap();
            let best = overlaps
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0;
            assert_eq!(best, mu, "overlaps {overlaps:?}");
        }
    }

    #[test]
    fn insufficient_class_samples_is_a_data_error() {
        let (ds, ckpt) = trained();
        let err = build_hopfield(&ckpt, &ds, 0, 10_000, &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let (ds, ckpt) = trained();
        let a = build_hopfield(&ckpt, &ds, 1, 5, &mut Rng::new(12)).unwrap();
        let b = build_hopfield(&ckpt, &ds, 1, 5, &mut Rng::new(12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scatter_normalizes_to_unit_interval() {
        let (ds, ckpt) = trained();
        let model = build_hopfield(&ckpt, &ds, 1, 8, &mut Rng::new(2)).unwrap();
        let records = energy_scatter(&ckpt, &ds, 1, &[0, 2], &model).unwrap();
        assert!(records.iter().all(|r| r.class == 0 || r.class == 2));
        let min_e = records.iter().map(|r| r.normalized_energy).fold(f64::INFINITY, f64::min);
        let max_e = records.iter().map(|r| r.normalized_energy).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min_e, 0.0);
        assert_eq!(max_e, 1.0);
        assert!(records
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.normalized_l2)));
    }

    #[test]
    fn empty_class_selection_rejected() {
        let (ds, ckpt) = trained();
        let model = build_hopfield(&ckpt, &ds, 0, 5, &mut Rng::new(2)).unwrap();
        assert!(matches!(
            energy_scatter(&ckpt, &ds, 0, &[], &model),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_record_normalizes_to_zero() {
        let (ds, ckpt) = trained();
        let model = build_hopfield(&ckpt, &ds, 0, 5, &mut Rng::new(2)).unwrap();
        // Limit the test set to one sample of class 0.
        let one = ds.take(1);
        let records = energy_scatter(&ckpt, &one, 0, &[0], &model).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].normalized_energy, 0.0);
        assert_eq!(records[0].normalized_l2, 0.0);
    }

    #[test]
    fn fisher_separation_basic_properties() {
        let a = [0.0, 0.1, -0.1];
        let b = [1.0, 1.1, 0.9];
        let wide = [10.0, -10.0, 0.0];
        assert!(fisher_separation(&a, &b) > fisher_separation(&a, &wide));
        assert_eq!(fisher_separation(&a, &a), 0.0);
    }
}
