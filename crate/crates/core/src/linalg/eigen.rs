use super::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

/// Eigenvalues of a symmetric matrix, sorted descending.
///
/// The input is symmetrized as `(A + A^T) / 2` before iteration, so slightly
/// asymmetric inputs (within roundoff of a covariance accumulation) are fine.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let (mut values, _) = jacobi(a, false)?;
    values.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(values)
}

/// Eigenvalues (descending) and matching eigenvectors as columns.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (values, vectors) = jacobi(a, true)?;
    let vectors = vectors.expect("requested eigenvectors");
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).expect("finite eigenvalues"));

    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            sorted_vectors.set(r, new_col, vectors.get(r, old_col));
        }
    }
    Ok((sorted_values, sorted_vectors))
}

/// Cyclic Jacobi iteration. Rotates away each off-diagonal element in turn
/// until the off-diagonal Frobenius norm drops below `1e-12 * ||A||_F` or the
/// sweep budget runs out.
fn jacobi(a: &Matrix, want_vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    if a.rows() != a.cols() {
        return Err(Error::dim("sym_eigenvalues", a.shape(), a.shape()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok((Vec::new(), want_vectors.then(|| Matrix::zeros(0, 0))));
    }

    // Symmetrize; the iteration below only reads/writes the upper triangle
    // logically but keeps the full matrix in sync.
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }

    let norm = m.frobenius_norm();
    let mut vectors = want_vectors.then(|| Matrix::identity(n));
    if n == 1 {
        return Ok((vec![m.get(0, 0)], vectors));
    }

    let threshold = OFF_DIAG_TOL * norm;
    for _sweep in 0..MAX_SWEEPS {
        if off_diag_norm(&m) <= threshold {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);

                // Stable rotation computation (Numerical Recipes style).
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e150 {
                    // Degenerate: rotation angle ~ apq / (aqq - app).
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                m.set(p, p, app - t * apq);
                m.set(q, q, aqq + t * apq);
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);

                for i in 0..n {
                    if i != p && i != q {
                        let aip = m.get(i, p);
                        let aiq = m.get(i, q);
                        let new_ip = aip - s * (aiq + tau * aip);
                        let new_iq = aiq + s * (aip - tau * aiq);
                        m.set(i, p, new_ip);
                        m.set(p, i, new_ip);
                        m.set(i, q, new_iq);
                        m.set(q, i, new_iq);
                    }
                }

                if let Some(v) = vectors.as_mut() {
                    for i in 0..n {
                        let vip = v.get(i, p);
                        let viq = v.get(i, q);
                        v.set(i, p, vip - s * (viq + tau * vip));
                        v.set(i, q, viq + s * (vip - tau * viq));
                    }
                }
            }
        }
    }

    let values = (0..n).map(|i| m.get(i, i)).collect();
    Ok((values, vectors))
}

fn off_diag_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut sum = 0.0;
    for i in 0..n - 1 {
        for j in i + 1..n {
            let x = m.get(i, j);
            sum += 2.0 * x * x;
        }
    }
    sum.sqrt()
}
