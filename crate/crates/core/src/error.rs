use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Pipeline stage an error was raised in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Stage {
    Design,
    Ols,
    Bandwidth,
    Tuning,
    CovarianceEstimate,
    Fgls,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Design => "design",
            Stage::Ols => "ols",
            Stage::Bandwidth => "bandwidth",
            Stage::Tuning => "tuning",
            Stage::CovarianceEstimate => "covariance estimate",
            Stage::Fgls => "fgls",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("unbalanced panel: {total} missing (unit, time) cells, first: {}", list_pairs(.missing))]
    Unbalanced {
        /// Up to ten missing `(unit, time)` pairs.
        missing: Vec<(String, String)>,
        total: usize,
    },

    #[error("duplicate observation for unit {unit:?} at time {time:?}")]
    Duplicate { unit: String, time: String },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular cross-product matrix: smallest singular value {min_singular_value:e}, condition number {condition:e}")]
    Singular {
        min_singular_value: f64,
        condition: f64,
    },

    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("estimated covariance is not positive definite (row {row}); PD lower bound c = {}", opt(.c_estimate))]
    OmegaNotPositiveDefinite { row: usize, c_estimate: Option<f64> },

    #[error("assembled covariance at the diagonalizing bound {c_bar} is not positive definite with L = {lag}; try a smaller L")]
    UpperBoundNotPositiveDefinite { c_bar: f64, lag: usize },

    #[error("empty admissible threshold interval: c = {c} exceeds C_bar = {c_bar}; try a larger L")]
    EmptyAdmissibleInterval { c: f64, c_bar: f64 },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("eigenvalue iteration did not converge after {iterations} steps; bracket [{lower}, {upper}]")]
    NonConvergence {
        lower: f64,
        upper: f64,
        iterations: usize,
    },

    #[error("nonpositive lag-0 variance for unit {unit}")]
    NonPositiveVariance { unit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{skipped} of {reps} replications failed, above the 2% limit")]
    SkipRateExceeded { skipped: usize, reps: usize },

    #[error("{stage} stage: {source}")]
    Stage { stage: Stage, source: Box<Error> },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Singular { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::OmegaNotPositiveDefinite { .. }
                | Error::UpperBoundNotPositiveDefinite { .. }
                | Error::EmptyAdmissibleInterval { .. }
                | Error::NotPositiveSemidefinite { .. }
                | Error::NonConvergence { .. }
                | Error::NonPositiveVariance { .. }
                | Error::SkipRateExceeded { .. }
        )
    }
}

fn list_pairs(pairs: &[(String, String)]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (k, (u, t)) in pairs.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "({u}, {t})");
    }
    out
}

fn opt(v: &Option<f64>) -> String {
    match v {
        Some(c) => alloc::format!("{c}"),
        None => String::from("unavailable"),
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
