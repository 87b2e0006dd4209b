//! The local training objective: cross-entropy through a frozen random
//! readout plus the geometric distance-ratio penalty, with analytic gradients
//! w.r.t. the layer activations.
//!
//! The geometric term compares summed squared pairwise distances between
//! samples of different classes (`d_F`) and the same class (`d_B`) within a
//! batch and penalizes `|ratio - alpha|`. By default the ratio is taken
//! between per-pair means so its scale is independent of the class balance of
//! the batch; the raw-totals ratio is available behind [`RatioMode::Total`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

/// How the inter/intra distance ratio is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// Ratio of per-pair mean distances (default).
    Mean,
    /// Ratio of raw distance totals.
    Total,
}

/// Variance convention for random readout entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutScale {
    /// N(0, 1) entries.
    Unit,
    /// N(0, 1/width) entries; keeps logit variance O(1) for wide layers.
    InvSqrtWidth,
}

/// A linear readout head mapping features (B x N) to logits (B x C).
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutHead {
    pub weights: Matrix,
    pub frozen: bool,
}

impl ReadoutHead {
    /// Gaussian head, frozen: the random classifier attached to a layer
    /// during its local training.
    pub fn random(rng: &mut Rng, width: usize, classes: usize, scale: ReadoutScale) -> Self {
        let std = match scale {
            ReadoutScale::Unit => 1.0,
            ReadoutScale::InvSqrtWidth => 1.0 / (width as f64).sqrt(),
        };
        ReadoutHead {
            weights: rng.gaussian_matrix(width, classes, 0.0, std),
            frozen: true,
        }
    }

    /// Zero-initialized trainable head (evaluation probes).
    pub fn trainable(width: usize, classes: usize) -> Self {
        ReadoutHead {
            weights: Matrix::zeros(width, classes),
            frozen: false,
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }
}

/// Per-layer geometric objective settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalConfig {
    /// Target inter/intra distance ratio.
    pub alpha: f64,
    /// Weight of the cross-entropy term.
    pub beta: f64,
    /// Intra-class distance floor below which the ratio is undefined.
    pub eps_guard: f64,
    pub ratio_mode: RatioMode,
}

impl GalConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
        }
        Ok(GalConfig {
            alpha,
            beta,
            eps_guard: 1e-8,
            ratio_mode: RatioMode::Mean,
        })
    }

    pub fn with_ratio_mode(mut self, mode: RatioMode) -> Self {
        self.ratio_mode = mode;
        self
    }
}

fn check_labels(labels: &[u8], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Data(format!(
            "label count {} does not match batch size {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Mean cross-entropy of `softmax(h * readout)` against the labels, plus the
/// gradient w.r.t. the features `h`.
pub fn cross_entropy(h: &Matrix, readout: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    let (loss, grad_h, _) = cross_entropy_full(h, readout, labels)?;
    Ok((loss, grad_h))
}

/// Cross-entropy with gradients for both the features and the readout
/// weights (the latter drives readout training).
pub fn cross_entropy_full(
    h: &Matrix,
    readout: &Matrix,
    labels: &[u8],
) -> Result<(f64, Matrix, Matrix)> {
    if h.cols() != readout.rows() {
        return Err(Error::dim("cross_entropy", h.shape(), readout.shape()));
    }
    let batch = h.rows();
    check_labels(labels, batch, readout.cols())?;

    let logits = h.matmul(readout)?;
    let mut probs = softmax_rows(&logits);

    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        loss -= probs.get(r, label as usize).ln();
    }
    loss /= batch as f64;

    // probs becomes dL/dlogits = (p - onehot) / B in place.
    let inv_b = 1.0 / batch as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = probs.row_mut(r);
        for v in row.iter_mut() {
            *v *= inv_b;
        }
        row[label as usize] -= inv_b;
    }

    let grad_h = probs.matmul_transpose_b(readout)?;
    let grad_readout = h.transpose_matmul(&probs)?;
    Ok((loss, grad_h, grad_readout))
}

/// Fraction of rows whose argmax logit matches the label.
pub fn accuracy(h: &Matrix, readout: &Matrix, labels: &[u8]) -> Result<f64> {
    if h.cols() != readout.rows() {
        return Err(Error::dim("accuracy", h.shape(), readout.shape()));
    }
    check_labels(labels, h.rows(), readout.cols())?;
    let logits = h.matmul(readout)?;
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Summed squared pairwise feature distances over unordered pairs, split by
/// label agreement, with the pair counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalDistances {
    /// Different-class ("far") total.
    pub d_f: f64,
    /// Same-class ("near") total.
    pub d_b: f64,
    pub pairs_f: usize,
    pub pairs_b: usize,
}

pub fn gal_distances(h: &Matrix, labels: &[u8]) -> Result<GalDistances> {
    let batch = h.rows();
    if batch < 2 {
        return Err(Error::Config(format!(
            "pairwise distances need at least 2 samples, got {batch}"
        )));
    }
    if labels.len() != batch {
        return Err(Error::Data(format!(
            "label count {} does not match batch size {batch}",
            labels.len()
        )));
    }

    let mut out = GalDistances {
        d_f: 0.0,
        d_b: 0.0,
        pairs_f: 0,
        pairs_b: 0,
    };
    for i in 0..batch {
        let hi = h.row(i);
        for j in i + 1..batch {
            let hj = h.row(j);
            let mut dist = 0.0;
            for (&a, &b) in hi.iter().zip(hj) {
                let d = a - b;
                dist += d * d;
            }
            if labels[i] == labels[j] {
                out.d_b += dist;
                out.pairs_b += 1;
            } else {
                out.d_f += dist;
                out.pairs_f += 1;
            }
        }
    }
    Ok(out)
}

/// Result of the geometric term on one batch.
#[derive(Debug, Clone)]
pub struct GalLoss {
    pub loss: f64,
    pub grad: Matrix,
    /// True when the batch was degenerate (missing pair kind or collapsed
    /// intra-class distances) and the term was skipped.
    pub skipped: bool,
    pub ratio: Option<f64>,
}

/// `|ratio - alpha|` with its gradient w.r.t. the features. Degenerate
/// batches yield `skipped = true` with zero loss and gradient rather than an
/// error, so mid-epoch single-class batches cannot abort training.
pub fn gal_loss(h: &Matrix, labels: &[u8], cfg: &GalConfig) -> Result<GalLoss> {
    let dists = gal_distances(h, labels)?;
    let (batch, width) = h.shape();

    if dists.pairs_f == 0 || dists.pairs_b == 0 || dists.d_b < cfg.eps_guard {
        return Ok(GalLoss {
            loss: 0.0,
            grad: Matrix::zeros(batch, width),
            skipped: true,
            ratio: None,
        });
    }

    // Mean mode rescales the totals ratio by the pair-count ratio.
    let count_factor = match cfg.ratio_mode {
        RatioMode::Mean => dists.pairs_b as f64 / dists.pairs_f as f64,
        RatioMode::Total => 1.0,
    };
    let ratio = count_factor * dists.d_f / dists.d_b;
    let loss = (ratio - cfg.alpha).abs();
    let sign = if ratio > cfg.alpha {
        1.0
    } else if ratio < cfg.alpha {
        -1.0
    } else {
        0.0 // subgradient convention exactly at the target
    };

    // Class sums for the closed-form distance gradients:
    //   d(d_F)/dh_i = 2 [ (B - n_{y_i}) h_i - (S_total - S_{y_i}) ]
    //   d(d_B)/dh_i = 2 [ n_{y_i} h_i - S_{y_i} ]
    let classes = labels.iter().map(|&l| l as usize).max().unwrap() + 1;
    let mut class_sums = Matrix::zeros(classes, width);
    let mut class_counts = vec![0usize; classes];
    let mut total_sum = vec![0.0f64; width];
    for (i, &label) in labels.iter().enumerate() {
        let row = h.row(i);
        let sums = class_sums.row_mut(label as usize);
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        for (t, &v) in total_sum.iter_mut().zip(row) {
            *t += v;
        }
        class_counts[label as usize] += 1;
    }

    let db_sq = dists.d_b * dists.d_b;
    let mut grad = Matrix::zeros(batch, width);
    for (i, &label) in labels.iter().enumerate() {
        let n_same = class_counts[label as usize] as f64;
        let n_diff = batch as f64 - n_same;
        let hi = h.row(i);
        let s_class = class_sums.row(label as usize);
        let out = grad.row_mut(i);
        for k in 0..width {
            let grad_df = 2.0 * (n_diff * hi[k] - (total_sum[k] - s_class[k]));
            let grad_db = 2.0 * (n_same * hi[k] - s_class[k]);
            let dratio = count_factor * (grad_df * dists.d_b - dists.d_f * grad_db) / db_sq;
            out[k] = sign * dratio;
        }
    }

    Ok(GalLoss {
        loss,
        grad,
        skipped: false,
        ratio: Some(ratio),
    })
}

/// The full local objective: `beta * CE + GAL`, with the summed gradient and
/// the per-term breakdown for logging.
#[derive(Debug, Clone)]
pub struct LocalLoss {
    pub loss: f64,
    pub grad: Matrix,
    pub ce: f64,
    pub gal: f64,
    pub ratio: Option<f64>,
    pub gal_skipped: bool,
}

pub fn local_loss(
    h: &Matrix,
    labels: &[u8],
    head: &ReadoutHead,
    cfg: &GalConfig,
) -> Result<LocalLoss> {
    let (ce, ce_grad) = cross_entropy(h, &head.weights, labels)?;
    let gal = gal_loss(h, labels, cfg)?;

    let mut grad = ce_grad.scale(cfg.beta);
    grad.add_assign(&gal.grad)?;

    Ok(LocalLoss {
        loss: cfg.beta * ce + gal.loss,
        grad,
        ce,
        gal: gal.loss,
        ratio: gal.ratio,
        gal_skipped: gal.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{
        finite_diff_gradient, max_relative_error, FD_FLOOR, FD_STEP, FD_TOLERANCE,
    };

    fn worked_example() -> (Matrix, Vec<u8>) {
        // 1-D features: class 0 at {0, 2}, class 1 at {10, 12}.
        let h = Matrix::new(4, 1, vec![0.0, 2.0, 10.0, 12.0]).unwrap();
        (h, vec![0, 0, 1, 1])
    }

    #[test]
    fn hand_enumerated_pairwise_distances() {
        let (h, y) = worked_example();
        let d = gal_distances(&h, &y).unwrap();
        assert_eq!(d.d_b, 8.0);
        assert_eq!(d.d_f, 408.0);
        assert_eq!(d.pairs_b, 2);
        assert_eq!(d.pairs_f, 4);
    }

    #[test]
    fn worked_ratio_and_loss() {
        let (h, y) = worked_example();
        let cfg = GalConfig::new(1.5, 0.0).unwrap();
        let out = gal_loss(&h, &y, &cfg).unwrap();
        assert_eq!(out.ratio, Some(25.5));
        assert_eq!(out.loss, 24.0);
        assert!(!out.skipped);
    }

    #[test]
    fn identical_samples_give_zero_distances() {
        let h = Matrix::new(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let d = gal_distances(&h, &[0, 0, 1]).unwrap();
        assert_eq!(d.d_f, 0.0);
        assert_eq!(d.d_b, 0.0);
    }

    #[test]
    fn single_class_batch_skips() {
        let mut rng = Rng::new(1);
        let h = rng.gaussian_matrix(5, 3, 0.0, 1.0);
        let d = gal_distances(&h, &[2, 2, 2, 2, 2]).unwrap();
        assert_eq!(d.pairs_f, 0);
        assert_eq!(d.d_f, 0.0);

        let cfg = GalConfig::new(1.0, 0.5).unwrap();
        let out = gal_loss(&h, &[2, 2, 2, 2, 2], &cfg).unwrap();
        assert!(out.skipped);
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ratio_exactly_at_target_has_zero_gradient() {
        let (h, y) = worked_example();
        let cfg = GalConfig::new(25.5, 0.0).unwrap();
        let out = gal_loss(&h, &y, &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let h = Matrix::new(3, 4, vec![0.5; 12]).unwrap();
        let readout = Matrix::zeros(4, 10);
        let (loss, grad) = cross_entropy(&h, &readout, &[0, 5, 9]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
        // Zero readout kills the feature gradient entirely.
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_class_symmetric_logits() {
        let h = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        // Columns equal so logits are [s, s] for any input.
        let readout = Matrix::new(2, 2, vec![0.3, 0.3, -0.2, -0.2]).unwrap();
        let (loss, grad) = cross_entropy(&h, &readout, &[0]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        // grad = (p - onehot) R^T with p = (1/2, 1/2).
        let expected = Matrix::new(1, 2, vec![
            -0.5 * 0.3 + 0.5 * 0.3,
            -0.5 * -0.2 + 0.5 * -0.2,
        ])
        .unwrap();
        assert!(grad.sub(&expected).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = Rng::new(42);
        let h = rng.gaussian_matrix(5, 6, 0.0, 1.0);
        let readout = rng.gaussian_matrix(6, 4, 0.0, 1.0);
        let labels = vec![0u8, 3, 1, 2, 3];

        let (_, analytic) = cross_entropy(&h, &readout, &labels).unwrap();
        let numeric = finite_diff_gradient(&h, FD_STEP, |p| {
            cross_entropy(p, &readout, &labels).unwrap().0
        });
        let err = max_relative_error(&analytic, &numeric, FD_FLOOR);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn gal_gradient_matches_finite_differences_away_from_kink() {
        let mut rng = Rng::new(7);
        for trial in 0..5 {
            let h = rng.gaussian_matrix(6, 4, 0.0, 1.0);
            let labels = vec![0u8, 1, 2, 0, 1, 2];
            let cfg = GalConfig::new(1.3 + 0.2 * trial as f64, 0.0).unwrap();
            let out = gal_loss(&h, &labels, &cfg).unwrap();
            assert!(!out.skipped);
            // Stay away from the |.| kink where FD is meaningless.
            if (out.ratio.unwrap() - cfg.alpha).abs() < 1e-3 {
                continue;
            }
            let numeric = finite_diff_gradient(&h, FD_STEP, |p| {
                gal_loss(p, &labels, &cfg).unwrap().loss
            });
            let err = max_relative_error(&out.grad, &numeric, FD_FLOOR);
            assert!(err < FD_TOLERANCE, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn local_loss_composite_matches_finite_differences() {
        let mut rng = Rng::new(64);
        let h = rng.gaussian_matrix(6, 5, 0.0, 1.0);
        let labels = vec![0u8, 1, 0, 1, 2, 2];
        let head = ReadoutHead::random(&mut rng, 5, 3, ReadoutScale::Unit);
        let mut cfg = GalConfig::new(1.5, 0.7).unwrap();

        for mode in [RatioMode::Mean, RatioMode::Total] {
            cfg.ratio_mode = mode;
            let out = local_loss(&h, &labels, &head, &cfg).unwrap();
            let numeric = finite_diff_gradient(&h, FD_STEP, |p| {
                local_loss(p, &labels, &head, &cfg).unwrap().loss
            });
            let err = max_relative_error(&out.grad, &numeric, FD_FLOOR);
            assert!(err < FD_TOLERANCE, "{mode:?}: relative error {err}");
        }
    }

    #[test]
    fn beta_zero_reduces_to_gal_loss() {
        let mut rng = Rng::new(3);
        let h = rng.gaussian_matrix(4, 3, 0.0, 1.0);
        let labels = vec![0u8, 1, 0, 1];
        let head = ReadoutHead::random(&mut rng, 3, 2, ReadoutScale::Unit);
        let cfg = GalConfig::new(2.0, 0.0).unwrap();

        let composite = local_loss(&h, &labels, &head, &cfg).unwrap();
        let gal = gal_loss(&h, &labels, &cfg).unwrap();
        assert_eq!(composite.loss, gal.loss);
        assert_eq!(composite.grad.data(), gal.grad.data());
    }

    #[test]
    fn skip_path_reduces_to_weighted_cross_entropy() {
        let mut rng = Rng::new(19);
        let h = rng.gaussian_matrix(4, 3, 0.0, 1.0);
        let labels = vec![1u8, 1, 1, 1];
        let head = ReadoutHead::random(&mut rng, 3, 2, ReadoutScale::Unit);
        let cfg = GalConfig::new(2.0, 0.6).unwrap();

        let composite = local_loss(&h, &labels, &head, &cfg).unwrap();
        assert!(composite.gal_skipped);
        let (ce, ce_grad) = cross_entropy(&h, &head.weights, &labels).unwrap();
        assert!((composite.loss - 0.6 * ce).abs() < 1e-15);
        let expected = ce_grad.scale(0.6);
        assert!(composite.grad.sub(&expected).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn distances_invariant_under_batch_permutation() {
        let mut rng = Rng::new(11);
        let h = rng.gaussian_matrix(7, 3, 0.0, 1.0);
        let labels = vec![0u8, 1, 2, 0, 1, 2, 0];
        let base = gal_distances(&h, &labels).unwrap();

        let perm = [3usize, 0, 6, 2, 5, 1, 4];
        let permuted_h = h.select_rows(&perm);
        let permuted_y: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let out = gal_distances(&permuted_h, &permuted_y).unwrap();
        assert!((out.d_f - base.d_f).abs() < 1e-9);
        assert!((out.d_b - base.d_b).abs() < 1e-9);
        assert_eq!(out.pairs_f, base.pairs_f);
        assert_eq!(out.pairs_b, base.pairs_b);
    }

    #[test]
    fn gal_loss_invariant_under_rotation_and_scaling() {
        let mut rng = Rng::new(55);
        let h = rng.gaussian_matrix(6, 4, 0.0, 1.0);
        let labels = vec![0u8, 0, 1, 1, 2, 2];
        let cfg = GalConfig::new(1.7, 0.0).unwrap();
        let base = gal_loss(&h, &labels, &cfg).unwrap();

        // Random product of plane rotations is orthogonal.
        let mut rotated = h.clone();
        for _ in 0..12 {
            let a = rng.next_below(4) as usize;
            let b = (a + 1 + rng.next_below(3) as usize) % 4;
            let theta = rng.next_f64() * std::f64::consts::TAU;
            let (s, c) = theta.sin_cos();
            for r in 0..rotated.rows() {
                let va = rotated.get(r, a);
                let vb = rotated.get(r, b);
                rotated.set(r, a, c * va - s * vb);
                rotated.set(r, b, s * va + c * vb);
            }
        }
        let rot = gal_loss(&rotated, &labels, &cfg).unwrap();
        assert!((rot.loss - base.loss).abs() < 1e-9, "rotation changed loss");

        // Uniform scaling leaves the ratio (hence the loss) unchanged,
        // while cross-entropy is not scale invariant.
        let scaled = h.scale(3.7);
        let sc = gal_loss(&scaled, &labels, &cfg).unwrap();
        assert!((sc.ratio.unwrap() - base.ratio.unwrap()).abs() < 1e-9);
        let head = ReadoutHead::random(&mut rng, 4, 3, ReadoutScale::Unit);
        let (ce_base, _) = cross_entropy(&h, &head.weights, &labels).unwrap();
        let (ce_scaled, _) = cross_entropy(&scaled, &head.weights, &labels).unwrap();
        assert!((ce_base - ce_scaled).abs() > 1e-6);
    }
}
