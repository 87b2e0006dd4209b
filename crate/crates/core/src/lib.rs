//! Geometry-aware layer-wise training of dense classifiers.
//!
//! Each hidden layer of a fully connected tanh network is trained against a
//! purely local objective: a cross-entropy term through a frozen random
//! readout plus a penalty `|d_F/d_B - alpha|` that drives the ratio of
//! inter-class to intra-class pairwise feature distances toward a target.
//! No error signal crosses layer boundaries.
//!
//! Alongside the trainer the crate ships the diagnostics used to study the
//! resulting representations: FGSM and Gaussian-noise robustness sweeps, a
//! Hebbian (Hopfield) energy model over hidden activity, and a two-regime
//! power-law fit of feature-covariance eigenspectra.

pub mod adversarial;
pub mod analysis;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod network;
pub mod objective;
pub mod optimizer;
pub mod trainer;

pub use error::{Error, Result};
