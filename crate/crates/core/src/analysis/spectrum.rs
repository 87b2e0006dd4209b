//! Feature-covariance eigenspectra and their two-regime power-law fit.
//!
//! Ranked eigenvalues of hidden-feature covariance matrices decay roughly as
//! `lambda_n ~ n^-gamma`. The fit works on log-log axes and splits the
//! spectrum into a head and a tail segment at the breakpoint minimizing the
//! total squared residual of the two independent line fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigenvalues, Matrix};

/// Eigenvalues below `RANK_TOL * lambda_1` are treated as numerical zeros.
const RANK_TOL: f64 = 1e-12;
/// Minimum points per fitted segment.
const MIN_SEGMENT: usize = 5;

/// Two-segment power-law fit of a descending eigenspectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    /// The usable (descending, positive) eigenvalues that were fitted.
    pub eigenvalues: Vec<f64>,
    /// The head segment covers ranks `1..=breakpoint`.
    pub breakpoint: usize,
    /// Negated head slope: lambda_n ~ n^-head_gamma for small n.
    pub head_gamma: f64,
    /// Negated tail slope.
    pub tail_gamma: f64,
    pub head_residual: f64,
    pub tail_residual: f64,
}

/// Descending eigenvalues of the population covariance `(1/M) X_c^T X_c` of
/// row-sample features.
pub fn covariance_eigenvalues(features: &Matrix) -> Result<Vec<f64>> {
    let samples = features.rows();
    if samples < 2 {
        return Err(Error::Analysis(format!(
            "covariance needs at least 2 samples, got {samples}"
        )));
    }
    let cols = features.cols();
    let mut centered = features.clone();
    for c in 0..cols {
        let mean = (0..samples).map(|r| features.get(r, c)).sum::<f64>() / samples as f64;
        for r in 0..samples {
            let v = centered.get(r, c) - mean;
            centered.set(r, c, v);
        }
    }
    let cov = centered.transpose_matmul(&centered)?.scale(1.0 / samples as f64);
    sym_eigenvalues(&cov)
}

/// Fits the two-regime power law to an already-computed spectrum.
pub fn fit_power_law_segments(eigenvalues: &[f64]) -> Result<SpectrumFit> {
    let Some(&largest) = eigenvalues.first() else {
        return Err(Error::Analysis("empty eigenspectrum".into()));
    };
    if largest.is_nan() || largest <= 0.0 {
        return Err(Error::Analysis(
            "degenerate spectrum: largest eigenvalue is not positive".into(),
        ));
    }
    let kept: Vec<f64> = eigenvalues
        .iter()
        .copied()
        .take_while(|&l| l > RANK_TOL * largest)
        .collect();
    let k = kept.len();
    if k < 2 * MIN_SEGMENT + 2 {
        return Err(Error::Analysis(format!(
            "only {k} usable eigenvalues; need at least {} to place a breakpoint",
            2 * MIN_SEGMENT + 2
        )));
    }

    let log_rank: Vec<f64> = (1..=k).map(|n| (n as f64).ln()).collect();
    let log_val: Vec<f64> = kept.iter().map(|l| l.ln()).collect();

    let mut best: Option<(usize, f64, LineFit, LineFit)> = None;
    for b in MIN_SEGMENT..=k - MIN_SEGMENT {
        let head = line_fit(&log_rank[..b], &log_val[..b]);
        let tail = line_fit(&log_rank[b..], &log_val[b..]);
        let total = head.ssr + tail.ssr;
        let better = match &best {
            Some((_, best_total, _, _)) => total < *best_total,
            None => true,
        };
        if better {
            best = Some((b, total, head, tail));
        }
    }
    let (breakpoint, _, head, tail) = best.expect("range is non-empty for k >= 12");

    Ok(SpectrumFit {
        eigenvalues: kept,
        breakpoint,
        head_gamma: -head.slope,
        tail_gamma: -tail.slope,
        head_residual: head.ssr,
        tail_residual: tail.ssr,
    })
}

/// Centered covariance spectrum plus the two-regime fit, in one call.
pub fn spectrum_fit(features: &Matrix) -> Result<SpectrumFit> {
    let eigenvalues = covariance_eigenvalues(features)?;
    fit_power_law_segments(&eigenvalues)
}

struct LineFit {
    slope: f64,
    ssr: f64,
}

fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    LineFit { slope, ssr }
}
