//! Dense linear algebra, deterministic RNG, and a symmetric eigensolver.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{sym_eigen, sym_eigenvalues};
pub use matrix::Matrix;
pub use rng::Rng;
