//! Feasible generalized least squares for balanced panels.
//!
//! The error covariance of the stacked panel regression is estimated
//! without a parametric model: each lag-`h` cross-sectional autocovariance
//! block of the OLS residuals is soft-thresholded (cross-sectional sparsity)
//! and the blocks are tapered by a Bartlett kernel and truncated beyond lag
//! `L` (weak serial dependence). The result is a symmetric block-banded
//! `NT × NT` matrix, factored in banded form and used for a single FGLS step.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, the command
//! line and the parallel simulation runner live in the `pfgls` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod block;
pub mod covariance;
pub mod dense;
pub mod error;
pub mod estimators;
pub mod monte_carlo;
pub mod normal;
pub mod panel;

pub use block::{sym_sqrt_dense, BandedCholesky, BlockBandedMatrix};
pub use covariance::{
    bartlett_weights, cross_validate_threshold, default_bandwidth, estimate_omega, lag_autocov,
    soft_threshold_blocks, CvConfig, CvOutcome, Kernel, LagBlockSet, SparsityDiagnostics,
    PdSearch, ThresholdBounds, ThresholdMode, TuningConfig,
};
pub use error::{Error, Result, Stage};
pub use estimators::{
    fgls, fgls_diag, fgls_pipeline, gls_oracle, wald_test, EstimationResult, EstimatorKind,
    TuningRequest,
};
pub use panel::{build_stacked, ols, DesignSpec, OlsSeKind, PanelData, StackedModel};

pub use nalgebra::{DMatrix, DVector};
