//! Standardization, covariance eigendecomposition and variance-threshold
//! projection of flattened spectrograms.

mod eigen;
mod matrix;
mod model;
mod standardize;

pub use eigen::{
    check_symmetric, symmetric_eigendecomposition, SymmetricEigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE,
    SYMMETRY_TOLERANCE,
};
pub use matrix::Matrix;
pub use model::{
    center_columns, covariance, emit_variance_curve, reshape_for_cnn, select_k_by_variance, spectrum,
    variance_curve, EigenRoute, PcaModel, PcaSummary, Spectrum,
};
pub use standardize::{fit_standardizer, Standardizer, STD_GUARD};
