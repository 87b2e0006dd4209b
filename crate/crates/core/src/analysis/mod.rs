//! Post-hoc representation diagnostics: Hebbian energy models, covariance
//! eigenspectra with power-law fits, and raw feature export.

mod export;
mod hopfield;
mod spectrum;

pub use export::{export_features, import_features};
pub use hopfield::{
    build_hopfield, energy_scatter, fisher_separation, EnergyRecord, HopfieldModel,
};
pub use spectrum::{covariance_eigenvalues, fit_power_law_segments, spectrum_fit, SpectrumFit};
