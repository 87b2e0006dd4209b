//! Input-perturbation attack harness: single-step FGSM and additive Gaussian
//! noise, swept over attack strength and evaluated per layer.
//!
//! FGSM attacks each layer through that layer's own evaluation readout
//! (white-box per curve): the perturbation follows the sign of the input
//! gradient of that readout's cross-entropy. Perturbed pixels are clipped
//! back to the valid `[-1, 1]` range unless clipping is disabled for
//! ablation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::network::{forward_stack, grad_input_through};
use crate::objective::cross_entropy;
use crate::trainer::{evaluate_inputs, ModelCheckpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Gaussian,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackKind::Fgsm => write!(f, "fgsm"),
            AttackKind::Gaussian => write!(f, "gaussian"),
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "gaussian" => Ok(AttackKind::Gaussian),
            other => Err(Error::Config(format!("unknown attack kind '{other}'"))),
        }
    }
}

/// FGSM perturbation against the readout at `layer`, clipped to `[-1, 1]`.
pub fn fgsm_perturb(
    ckpt: &ModelCheckpoint,
    layer: usize,
    x: &Matrix,
    labels: &[u8],
    eps: f64,
) -> Result<Matrix> {
    fgsm_perturb_with(ckpt, layer, x, labels, eps, true)
}

/// FGSM with optional clipping (`x_adv = x + eps * sign(grad_x CE)`).
pub fn fgsm_perturb_with(
    ckpt: &ModelCheckpoint,
    layer: usize,
    x: &Matrix,
    labels: &[u8],
    eps: f64,
    clip: bool,
) -> Result<Matrix> {
    if eps < 0.0 {
        return Err(Error::Config(format!("eps must be >= 0, got {eps}")));
    }
    let grad = input_gradient(ckpt, layer, x, labels)?;
    let mut adv = x.clone();
    for (v, &g) in adv.data_mut().iter_mut().zip(grad.data()) {
        // sign(0) = 0: untouched pixels stay untouched.
        let step = if g > 0.0 {
            eps
        } else if g < 0.0 {
            -eps
        } else {
            0.0
        };
        *v += step;
        if clip {
            *v = v.clamp(-1.0, 1.0);
        }
    }
    Ok(adv)
}

/// Gradient of the mean cross-entropy at `layer` (through that layer's
/// evaluation readout) w.r.t. the raw input pixels.
pub fn input_gradient(
    ckpt: &ModelCheckpoint,
    layer: usize,
    x: &Matrix,
    labels: &[u8],
) -> Result<Matrix> {
    let readout = ckpt.eval_readout(layer)?;
    let (_, caches) = forward_stack(&ckpt.blocks[..=layer], x)?;
    let h = &caches[layer].output;
    let (_, grad_h) = cross_entropy(h, readout, labels)?;
    grad_input_through(&ckpt.blocks, &caches, layer, &grad_h)
}

/// Additive white noise `x + eps * eta`, `eta ~ N(0, 1)`, clipped.
pub fn gaussian_perturb(x: &Matrix, eps: f64, rng: &mut Rng) -> Matrix {
    gaussian_perturb_with(x, eps, rng, true)
}

pub fn gaussian_perturb_with(x: &Matrix, eps: f64, rng: &mut Rng, clip: bool) -> Matrix {
    let mut adv = x.clone();
    for v in adv.data_mut() {
        *v += eps * rng.standard_normal();
        if clip {
            *v = v.clamp(-1.0, 1.0);
        }
    }
    adv
}

/// One (kind, layer, eps) cell of a sweep, as emitted in JSON-lines reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub kind: AttackKind,
    pub layer: usize,
    pub eps: f64,
    pub accuracy: f64,
    pub seed: u64,
    pub samples: usize,
}

/// Accuracy of every probed layer across an epsilon sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub sample_count: usize,
    /// Hidden-layer indices that had trained readouts, aligned with `accuracies`.
    pub layers: Vec<usize>,
    /// `accuracies[i][j]` = accuracy of `layers[i]` at `epsilons[j]`.
    pub accuracies: Vec<Vec<f64>>,
}

impl AttackReport {
    pub fn records(&self) -> Vec<AttackRecord> {
        let mut out = Vec::with_capacity(self.layers.len() * self.epsilons.len());
        for (i, &layer) in self.layers.iter().enumerate() {
            for (j, &eps) in self.epsilons.iter().enumerate() {
                out.push(AttackRecord {
                    kind: self.kind,
                    layer,
                    eps,
                    accuracy: self.accuracies[i][j],
                    seed: self.seed,
                    samples: self.sample_count,
                });
            }
        }
        out
    }

    /// One JSON object per line, one line per (layer, eps) cell.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in self.records() {
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn accuracy_at(&self, layer: usize, eps_index: usize) -> Option<f64> {
        let i = self.layers.iter().position(|&l| l == layer)?;
        self.accuracies.get(i)?.get(eps_index).copied()
    }
}

/// Runs the attack over every (probed layer, epsilon) cell on the full test
/// set. Cells are independent and deterministic: Gaussian noise for each
/// cell comes from a generator derived from the report seed and the cell
/// coordinates, so execution order and thread count do not matter.
pub fn robustness_sweep(
    ckpt: &ModelCheckpoint,
    ds_test: &crate::dataset::Dataset,
    kind: AttackKind,
    epsilons: &[f64],
    seed: u64,
    clip: bool,
) -> Result<AttackReport> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    if let Some(&bad) = epsilons.iter().find(|&&e| e.is_nan() || e < 0.0) {
        return Err(Error::Config(format!("eps must be >= 0, got {bad}")));
    }
    let layers: Vec<usize> = (0..ckpt.num_layers())
        .filter(|&l| ckpt.eval_readouts[l].is_some())
        .collect();
    if layers.is_empty() {
        return Err(Error::State(
            "checkpoint has no trained evaluation readouts; run training first".into(),
        ));
    }

    let cells: Vec<(usize, usize)> = layers
        .iter()
        .flat_map(|&l| (0..epsilons.len()).map(move |j| (l, j)))
        .collect();

    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(layer, j)| {
            let eps = epsilons[j];
            let adv = match kind {
                AttackKind::Fgsm => {
                    fgsm_perturb_with(ckpt, layer, &ds_test.images, &ds_test.labels, eps, clip)?
                }
                AttackKind::Gaussian => {
                    let mut cell_rng =
                        Rng::derive(seed, (layer as u64) << 32 | j as u64);
                    gaussian_perturb_with(&ds_test.images, eps, &mut cell_rng, clip)
                }
            };
            evaluate_inputs(ckpt, &adv, &ds_test.labels, layer)
        })
        .collect();

    let mut accuracies = vec![vec![0.0; epsilons.len()]; layers.len()];
    for (&(layer, j), result) in cells.iter().zip(results) {
        let i = layers.iter().position(|&l| l == layer).unwrap();
        accuracies[i][j] = result?;
    }

    Ok(AttackReport {
        kind,
        epsilons: epsilons.to_vec(),
        seed,
        sample_count: ds_test.len(),
        layers,
        accuracies,
    })
}
