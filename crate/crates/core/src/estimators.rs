//! GLS-type estimators and coefficient inference.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::block::{BandedCholesky, BlockBandedMatrix};
use crate::covariance::{
    cross_validate_threshold, default_bandwidth, diagonal_omega, estimate_omega, CvConfig, Kernel,
    OmegaEstimate, SparsityDiagnostics, ThresholdBounds, ThresholdMode, TuningConfig,
};
use crate::dense::{spd_inverse_checked, symmetrize};
use crate::error::{Error, Result, Stage};
use crate::normal;
use crate::panel::{build_stacked, ols, DesignSpec, OlsFit, OlsSeKind, PanelData, StackedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EstimatorKind {
    Ols(OlsSeKind),
    Fgls,
    /// FGLS with a heteroskedasticity-only (diagonal) covariance.
    FglsDiag,
    /// GLS with the true covariance; only available in simulations.
    GlsOracle,
}

/// Tuning actually used for an FGLS fit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TuningProvenance {
    pub config: TuningConfig,
    /// The bandwidth came from the `4 (T/100)^(2/9)` rule.
    pub lag_from_rule: bool,
    /// `T < 100`: a bandwidth of at most 3 is advisable.
    pub small_sample: bool,
    pub gamma_t: f64,
    /// Present when the threshold constant was cross-validated.
    pub bounds: Option<ThresholdBounds>,
    pub folds: Option<usize>,
    pub cv_curve: Vec<(f64, f64)>,
    pub diagnostics: SparsityDiagnostics,
}

/// Not serde-derived: nalgebra only serializes dynamic storage with `std`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub kind: EstimatorKind,
    pub beta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub se: DVector<f64>,
    pub t_stats: DVector<f64>,
    /// `X' Omega^-1 X / NT` for the GLS-type estimators.
    pub gamma_hat: Option<DMatrix<f64>>,
    pub tuning: Option<TuningProvenance>,
}

impl EstimationResult {
    pub fn new(kind: EstimatorKind, beta: DVector<f64>, vcov: DMatrix<f64>, gamma_hat: Option<DMatrix<f64>>) -> Self {
        let se = DVector::from_fn(beta.len(), |k, _| libm::sqrt(vcov[(k, k)].max(0.0)));
        let t_stats = DVector::from_fn(beta.len(), |k, _| beta[k] / se[k]);
        Self {
            kind,
            beta,
            vcov,
            se,
            t_stats,
            gamma_hat,
            tuning: None,
        }
    }
}

/// Anything that can apply `Omega^-1` to a block of columns.
pub trait CovarianceSolver {
    fn dim(&self) -> usize;
    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl CovarianceSolver for BandedCholesky {
    fn dim(&self) -> usize {
        BandedCholesky::dim(self)
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        BandedCholesky::solve(self, rhs)
    }
}

/// Dense Cholesky of an explicit covariance matrix.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DenseCovariance {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        let n = omega.nrows();
        omega
            .cholesky()
            .map(|chol| Self { chol })
            .ok_or(Error::NotPositiveDefinite { row: n, pivot: f64::NAN })
    }
}

impl CovarianceSolver for DenseCovariance {
    fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::Dimension("right-hand side does not match covariance".into()));
        }
        Ok(self.chol.solve(rhs))
    }
}

/// `beta = (X' Omega^-1 X)^-1 X' Omega^-1 Y` with covariance
/// `(X' Omega^-1 X)^-1`.
pub fn gls(model: &StackedModel, omega: &dyn CovarianceSolver, kind: EstimatorKind) -> Result<EstimationResult> {
    let nt = model.n_obs();
    if omega.dim() != nt {
        return Err(Error::Dimension(alloc::format!(
            "covariance is {0} x {0} but the model has {nt} rows",
            omega.dim()
        )));
    }
    let d = model.n_regressors();
    let mut rhs = DMatrix::zeros(nt, d + 1);
    rhs.columns_mut(0, d).copy_from(&model.x);
    rhs.column_mut(d).copy_from(&model.y);
    let solved = omega.solve(&rhs)?;
    let weighted_x = solved.columns(0, d);
    let mut g = model.x.tr_mul(&weighted_x);
    symmetrize(&mut g);
    let b = model.x.tr_mul(&solved.column(d));
    let vcov = spd_inverse_checked(&g)?;
    let beta = &vcov * b;
    let gamma_hat = g / nt as f64;
    Ok(EstimationResult::new(kind, beta, vcov, Some(gamma_hat)))
}

pub fn fgls(model: &StackedModel, omega: &BlockBandedMatrix) -> Result<EstimationResult> {
    let factor = omega.cholesky()?;
    gls(model, &factor, EstimatorKind::Fgls)
}

/// Infeasible GLS with the true covariance.
pub fn gls_oracle(model: &StackedModel, omega: &dyn CovarianceSolver) -> Result<EstimationResult> {
    gls(model, omega, EstimatorKind::GlsOracle)
}

/// How to pick `L` and `M`; absent values are chosen automatically.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TuningRequest {
    pub lag: Option<usize>,
    pub threshold_constant: Option<f64>,
    pub kernel: Kernel,
    pub mode: ThresholdMode,
    pub cv: CvConfig,
}

/// Chooses the tuning for a residual matrix and estimates the covariance.
pub fn tune_and_estimate(residuals: &DMatrix<f64>, request: &TuningRequest) -> Result<(OmegaEstimate, TuningProvenance)> {
    let t_len = residuals.ncols();
    let rule = default_bandwidth(t_len);
    let lag = request.lag.unwrap_or(rule.lag);
    if lag >= t_len {
        return Err(Error::InvalidConfig(alloc::format!("bandwidth L = {lag} must be below T = {t_len}")).at(Stage::Bandwidth));
    }
    let (constant, bounds, folds, curve) = match request.threshold_constant {
        Some(m) => (m, None, None, Vec::new()),
        None => {
            let cv = cross_validate_threshold(residuals, lag, request.kernel, request.mode, &request.cv)
                .map_err(|e| e.at(Stage::Tuning))?;
            (cv.threshold_constant, Some(cv.bounds), Some(cv.folds), cv.curve)
        }
    };
    let config = TuningConfig {
        lag,
        threshold_constant: constant,
        kernel: request.kernel,
        mode: request.mode,
    };
    let est = estimate_omega(residuals, &config).map_err(|e| e.at(Stage::CovarianceEstimate))?;
    let provenance = TuningProvenance {
        config,
        lag_from_rule: request.lag.is_none(),
        small_sample: rule.small_sample,
        gamma_t: est.lags.gamma_t,
        bounds,
        folds,
        cv_curve: curve,
        diagnostics: est.diagnostics.clone(),
    };
    Ok((est, provenance))
}

/// Output of the end-to-end pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: StackedModel,
    pub ols: OlsFit,
    pub omega: OmegaEstimate,
    pub fgls: EstimationResult,
}

/// Design transform, OLS, covariance tuning and estimation from the OLS
/// residuals, then a single FGLS step.
pub fn fgls_pipeline(data: &PanelData, spec: &DesignSpec, request: &TuningRequest) -> Result<PipelineOutput> {
    let model = build_stacked(data, spec).map_err(|e| e.at(Stage::Design))?;
    let fit = ols(&model).map_err(|e| e.at(Stage::Ols))?;
    let (est, provenance) = tune_and_estimate(&fit.residual_matrix(), request)?;
    let mut result = gls(&model, &est.factor, EstimatorKind::Fgls).map_err(|e| e.at(Stage::Fgls))?;
    result.tuning = Some(provenance);
    Ok(PipelineOutput {
        model,
        ols: fit,
        omega: est,
        fgls: result,
    })
}

/// FGLS with the heteroskedasticity-only covariance built from `fit`'s residuals.
pub fn fgls_diag(model: &StackedModel, fit: &OlsFit) -> Result<EstimationResult> {
    let est = diagonal_omega(&fit.residual_matrix()).map_err(|e| e.at(Stage::CovarianceEstimate))?;
    gls(model, &est.factor, EstimatorKind::FglsDiag).map_err(|e| e.at(Stage::Fgls))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WaldOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Per-coefficient two-sided z tests. The null is rejected only when
/// `|z|` strictly exceeds the `1 - level / 2` normal quantile.
pub fn wald_test(result: &EstimationResult, null: &[f64], level: f64) -> Result<Vec<WaldOutcome>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("test level {level} outside (0, 1)")));
    }
    if null.len() != result.beta.len() {
        return Err(Error::Dimension("null vector length differs from beta".into()));
    }
    let crit = normal::quantile(1.0 - level / 2.0);
    Ok(result
        .beta
        .iter()
        .zip(result.se.iter())
        .zip(null)
        .map(|((b, s), b0)| {
            let diff = b - b0;
            let statistic = if diff == 0.0 { 0.0 } else { diff / s };
            WaldOutcome {
                statistic,
                p_value: normal::two_sided_p(statistic),
                reject: statistic.abs() > crit,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> StackedModel {
        let x = DMatrix::from_fn(12, 2, |r, c| if c == 0 { 1.0 + (r % 5) as f64 } else { ((r * 7) % 3) as f64 - 1.0 });
        let y = DVector::from_fn(12, |r, _| 0.5 * x[(r, 0)] - 2.0 * x[(r, 1)] + ((r * 13) % 7) as f64 * 0.1);
        StackedModel {
            y,
            x,
            n_units: 3,
            n_periods: 4,
            transform_log: Vec::new(),
        }
    }

    #[test]
    fn identity_covariance_reduces_to_ols() {
        let m = small_model();
        let r = fgls(&m, &BlockBandedMatrix::identity(3, 4)).unwrap();
        let o = ols(&m).unwrap();
        assert!((&r.beta - &o.beta).amax() < 1e-10);
        assert!((&r.vcov - &o.xtx_inv).amax() < 1e-10);
    }

    #[test]
    fn scalar_covariance_scales_vcov_only() {
        let m = small_model();
        let k = 3.5;
        let omega = BlockBandedMatrix::block_diagonal(DMatrix::identity(3, 3) * k, 4).unwrap();
        let r = fgls(&m, &omega).unwrap();
        let o = ols(&m).unwrap();
        assert!((&r.beta - &o.beta).amax() < 1e-12);
        assert!((&r.vcov - &o.xtx_inv * k).amax() < 1e-12);
        // vcov is the inverse of NT * Gamma_hat
        let g = r.gamma_hat.as_ref().unwrap() * 12.0;
        assert!((&r.vcov * g - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn wald_boundary_and_p_values() {
        let crit = normal::quantile(0.975);
        let mk = |b: f64| EstimationResult::new(EstimatorKind::Fgls, DVector::from_element(1, b), DMatrix::from_element(1, 1, 1.0), None);
        assert!(!wald_test(&mk(crit), &[0.0], 0.05).unwrap()[0].reject);
        assert!(wald_test(&mk(crit + 1e-12), &[0.0], 0.05).unwrap()[0].reject);
        // 1.96 lies just above the exact 97.5% quantile (1.959964).
        assert!(wald_test(&mk(1.96), &[0.0], 0.05).unwrap()[0].reject);
        let zero = wald_test(&mk(0.0), &[0.0], 0.05).unwrap()[0];
        assert_eq!(zero.p_value, 1.0);
        assert!(!zero.reject);
        let p = wald_test(&mk(2.5), &[0.0], 0.05).unwrap()[0].p_value;
        assert!((p - 0.0124).abs() < 5e-5);
        assert!(wald_test(&mk(1.0), &[0.0], 1.5).is_err());
    }

    #[test]
    fn gls_rejects_dimension_mismatch() {
        let m = small_model();
        let f = BlockBandedMatrix::identity(2, 4).cholesky().unwrap();
        assert!(matches!(gls(&m, &f, EstimatorKind::Fgls), Err(Error::Dimension(_))));
    }
}
