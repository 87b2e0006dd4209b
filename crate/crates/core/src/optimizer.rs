//! Adam optimizer with bias correction, one state per parameter matrix.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// First/second moment estimates plus hyperparameters for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Matrix,
    v: Matrix,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, lr: f64) -> Self {
        AdamState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update:
    /// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    /// param <- param - lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != self.m.shape() || grad.shape() != self.m.shape() {
            return Err(Error::dim("adam_step", param.shape(), grad.shape()));
        }
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);

        let m = self.m.data_mut();
        let v = self.v.data_mut();
        let p = param.data_mut();
        let g = grad.data();
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Little-endian binary snapshot; round-trips bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.m.cols() as u32).to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        for x in [self.lr, self.beta1, self.beta2, self.eps] {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        for x in self.m.data().iter().chain(self.v.data()) {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, msg: &str| Error::Format {
            offset,
            msg: msg.to_string(),
        };
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(fail(pos, &format!("truncated reading {what}")));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let rows = u32::from_le_bytes(take(4, "rows")?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4, "cols")?.try_into().unwrap()) as usize;
        let t = u64::from_le_bytes(take(8, "step count")?.try_into().unwrap());
        let mut scalars = [0.0f64; 4];
        for s in scalars.iter_mut() {
            *s = f64::from_bits(u64::from_le_bytes(take(8, "hyperparameter")?.try_into().unwrap()));
        }
        let n = rows * cols;
        let mut read_matrix = |what: &str| -> Result<Matrix> {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(u64::from_le_bytes(
                    take(8, what)?.try_into().unwrap(),
                )));
            }
            Matrix::new(rows, cols, data)
        };
        let m = read_matrix("first moment")?;
        let v = read_matrix("second moment")?;
        if pos != bytes.len() {
            return Err(fail(pos, "trailing bytes"));
        }
        Ok(AdamState {
            m,
            v,
            t,
            lr: scalars[0],
            beta1: scalars[1],
            beta2: scalars[2],
            eps: scalars[3],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(2, 3, 0.01);
        let mut param = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let before = param.clone();
        state.step(&mut param, &Matrix::zeros(2, 3)).unwrap();
        assert_eq!(param, before);
    }

    #[test]
    fn first_step_is_signed_unit_learning_rate() {
        // At t=1 the bias corrections cancel: delta = -lr * g / (|g| + eps).
        let lr = 0.001;
        let mut state = AdamState::new(1, 4, lr);
        let mut param = Matrix::zeros(1, 4);
        let grad = Matrix::new(1, 4, vec![0.5, -2.0, 10.0, -0.01]).unwrap();
        state.step(&mut param, &grad).unwrap();
        for (p, &g) in param.data().iter().zip(grad.data()) {
            let expected = -lr * g / (g.abs() + DEFAULT_EPS);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
            assert!(p.abs() <= lr * (1.0 + 1e-9));
            assert!((p.abs() - lr).abs() < 1e-5, "~= -lr*sign(g) for |g| >> eps");
        }
    }

    #[test]
    fn steps_stay_bounded() {
        let lr = 0.01;
        let mut rng = Rng::new(6);
        let mut state = AdamState::new(3, 3, lr);
        let mut param = Matrix::zeros(3, 3);
        // |delta| <= lr * (1-b1)/sqrt(1-b2) ~= 3.17 lr in the worst case.
        let bound = lr * (1.0 - DEFAULT_BETA1) / (1.0 - DEFAULT_BETA2).sqrt() + lr * 1e-6;
        for _ in 0..200 {
            let before = param.clone();
            let grad = rng.gaussian_matrix(3, 3, 0.0, 2.0);
            state.step(&mut param, &grad).unwrap();
            for (a, b) in param.data().iter().zip(before.data()) {
                assert!((a - b).abs() <= bound, "step {} exceeds {}", (a - b).abs(), bound);
            }
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = Rng::new(77);
            let mut state = AdamState::new(4, 2, 0.005);
            let mut param = rng.gaussian_matrix(4, 2, 0.0, 1.0);
            for _ in 0..50 {
                let grad = rng.gaussian_matrix(4, 2, 0.0, 1.0);
                state.step(&mut param, &grad).unwrap();
            }
            param
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(2, 2, 0.01);
        let mut param = Matrix::zeros(2, 2);
        let grad = Matrix::zeros(2, 3);
        assert!(matches!(
            state.step(&mut param, &grad),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let mut rng = Rng::new(15);
        let mut state = AdamState::new(3, 5, 0.002);
        let mut param = rng.gaussian_matrix(3, 5, 0.0, 1.0);
        for _ in 0..7 {
            let grad = rng.gaussian_matrix(3, 5, 0.0, 1.0);
            state.step(&mut param, &grad).unwrap();
        }
        let bytes = state.to_bytes();
        let restored = AdamState::from_bytes(&bytes).unwrap();
        assert_eq!(state, restored);
        assert_eq!(bytes, restored.to_bytes());
    }
}
