//! Nonparametric estimation of the `NT × NT` error covariance.
//!
//! Lag-`h` cross-sectional autocovariances of the residuals are
//! soft-thresholded entry by entry (off-diagonals only), tapered across lags
//! by a kernel and assembled into a [`BlockBandedMatrix`]. The threshold
//! constant is tuned by contiguous-block cross-validation on the lag-0
//! block, restricted to the range where the assembled matrix stays positive
//! definite.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::block::{BandedCholesky, BlockBandedMatrix};
use crate::error::{Error, Result};

/// Lag taper `omega(h, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Kernel {
    /// `1 - h / (L + 1)`.
    #[default]
    Bartlett,
    /// Unit weight for every retained lag.
    Truncated,
}

impl Kernel {
    pub fn weights(self, lag: usize) -> Vec<f64> {
        match self {
            Kernel::Bartlett => bartlett_weights(lag),
            Kernel::Truncated => vec![1.0; lag + 1],
        }
    }
}

pub fn bartlett_weights(lag: usize) -> Vec<f64> {
    let denom = (lag + 1) as f64;
    (0..=lag).map(|h| 1.0 - h as f64 / denom).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ThresholdMode {
    /// Each lag block is thresholded on its own.
    #[default]
    LagWise,
    /// An off-diagonal pair is kept at every lag or at none: it is zeroed
    /// when `max_h |R_h,ij| <= tau_ij`.
    Universal,
}

/// Rule-of-thumb bandwidth and whether the sample is short enough that
/// `L <= 3` is advisable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandwidthChoice {
    pub lag: usize,
    pub small_sample: bool,
}

/// `round(4 (T / 100)^(2/9))`, capped at `T - 2`.
pub fn default_bandwidth(n_periods: usize) -> BandwidthChoice {
    let raw = 4.0 * libm::pow(n_periods as f64 / 100.0, 2.0 / 9.0);
    let lag = (libm::round(raw) as usize).min(n_periods.saturating_sub(2));
    BandwidthChoice {
        lag,
        small_sample: n_periods < 100,
    }
}

/// `sqrt(log(L N) / T)`, with `L` floored at one so the `L = 0` case stays
/// defined; zero when `L N <= 1`.
pub fn threshold_rate(lag: usize, n_units: usize, n_periods: usize) -> f64 {
    let ln = (lag.max(1) * n_units) as f64;
    if ln <= 1.0 {
        0.0
    } else {
        libm::sqrt(libm::log(ln) / n_periods as f64)
    }
}

/// Raw lag autocovariances `R_h = T^-1 sum_{t > h} u_t u_{t-h}'` for
/// `h = 0..=lag`, from an `N × T` residual matrix.
pub fn lag_autocov(residuals: &DMatrix<f64>, lag: usize) -> Result<Vec<DMatrix<f64>>> {
    let (n, t_len) = residuals.shape();
    if lag >= t_len {
        return Err(Error::InvalidConfig(alloc::format!(
            "bandwidth L = {lag} must be below T = {t_len}"
        )));
    }
    let inv_t = 1.0 / t_len as f64;
    Ok((0..=lag)
        .map(|h| {
            let lead = residuals.columns(h, t_len - h);
            let lagged = residuals.columns(0, t_len - h);
            let mut r = DMatrix::zeros(n, n);
            r.gemm(inv_t, &lead, &lagged.transpose(), 0.0);
            r
        })
        .collect())
}

/// Soft-thresholding `sgn(z) (|z| - tau)_+`.
#[inline]
pub fn soft_threshold(z: f64, tau: f64) -> f64 {
    let m = z.abs() - tau;
    if m > 0.0 {
        if z < 0.0 {
            -m
        } else {
            m
        }
    } else {
        0.0
    }
}

/// Raw and thresholded lag blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LagBlockSet {
    pub raw: Vec<DMatrix<f64>>,
    pub thresholded: Vec<DMatrix<f64>>,
    pub lag: usize,
    pub threshold_constant: f64,
    pub gamma_t: f64,
    /// `tau_ij = M gamma_T sqrt(|R_0,ii| |R_0,jj|)`; zero on the diagonal.
    pub tau: DMatrix<f64>,
    pub mode: ThresholdMode,
}

fn check_variances(r0: &DMatrix<f64>) -> Result<()> {
    match (0..r0.nrows()).find(|&i| !(r0[(i, i)] > 0.0)) {
        Some(unit) => Err(Error::NonPositiveVariance { unit }),
        None => Ok(()),
    }
}

fn threshold_matrix(r0: &DMatrix<f64>, constant: f64, gamma_t: f64) -> DMatrix<f64> {
    let n = r0.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            constant * gamma_t * libm::sqrt((r0[(i, i)] * r0[(j, j)]).abs())
        }
    })
}

/// Thresholds every lag block with the lag-independent `tau_ij`; diagonal
/// entries are never thresholded.
pub fn soft_threshold_blocks(
    raw: &[DMatrix<f64>],
    constant: f64,
    mode: ThresholdMode,
    n_periods: usize,
) -> Result<LagBlockSet> {
    let r0 = raw.first().ok_or_else(|| Error::Dimension("no lag blocks".into()))?;
    check_variances(r0)?;
    let n = r0.nrows();
    let lag = raw.len() - 1;
    let gamma_t = threshold_rate(lag, n, n_periods);
    let tau = threshold_matrix(r0, constant, gamma_t);

    let keep_pair = |i: usize, j: usize| match mode {
        ThresholdMode::LagWise => true,
        ThresholdMode::Universal => raw.iter().any(|r| r[(i, j)].abs() > tau[(i, j)]),
    };
    let mut survivors = DMatrix::from_element(n, n, true);
    if mode == ThresholdMode::Universal {
        for j in 0..n {
            for i in 0..n {
                survivors[(i, j)] = i == j || keep_pair(i, j);
            }
        }
    }
    let thresholded = raw
        .iter()
        .map(|r| {
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    r[(i, j)]
                } else if survivors[(i, j)] {
                    soft_threshold(r[(i, j)], tau[(i, j)])
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(LagBlockSet {
        raw: raw.to_vec(),
        thresholded,
        lag,
        threshold_constant: constant,
        gamma_t,
        tau,
        mode,
    })
}

/// Smallest threshold constant that zeroes every off-diagonal entry of the
/// thresholded lag-0 block: `max_{i != j} |R_0,ij| / (gamma_T sqrt(R_0,ii R_0,jj))`.
pub fn diagonalizing_bound(r0: &DMatrix<f64>, gamma_t: f64) -> Result<f64> {
    check_variances(r0)?;
    let n = r0.nrows();
    let mut best = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let scale = libm::sqrt(r0[(i, i)] * r0[(j, j)]);
                best = best.max(r0[(i, j)].abs() / scale);
            }
        }
    }
    if best == 0.0 {
        return Ok(0.0);
    }
    if gamma_t > 0.0 {
        Ok(best / gamma_t)
    } else {
        Ok(f64::INFINITY)
    }
}

/// Everything needed to assemble `Omega_hat(M, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TuningConfig {
    pub lag: usize,
    pub threshold_constant: f64,
    pub kernel: Kernel,
    pub mode: ThresholdMode,
}

/// Cross-validation settings for the threshold constant.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvConfig {
    /// Number of contiguous folds; `round(ln T)` when absent.
    pub folds: Option<usize>,
    /// Log-spaced grid points between the admissible bounds.
    pub grid_size: usize,
    /// Overrides the closed-form diagonalizing bound as the top of the grid.
    pub upper: Option<f64>,
    pub pd: PdSearch,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: None,
            grid_size: 50,
            upper: None,
            pd: PdSearch::default(),
        }
    }
}

/// Settings of the positive-definiteness search for `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PdSearch {
    /// Absolute resolution of the bisection on `M`.
    pub resolution: f64,
    /// Grid points scanned downward from `C_bar`.
    pub scan_points: usize,
    /// Eigenvalue floor, relative to the smallest lag-0 variance, that an
    /// assembly must clear to count as positive definite. Zero gives the
    /// bare Cholesky test.
    pub margin: f64,
}

impl Default for PdSearch {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            scan_points: 50,
            margin: 1e-2,
        }
    }
}

/// Lower end of the grid when the PD bound is zero.
pub const GRID_FLOOR: f64 = 1e-2;

/// Per-lag survivor counts of the thresholded blocks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SparsityDiagnostics {
    /// Largest number of nonzero entries (diagonal included) in any row of
    /// any thresholded lag block.
    pub m_n_hat: usize,
    /// Fraction of nonzero off-diagonal entries, per lag.
    pub survivor_fraction: Vec<f64>,
}

impl SparsityDiagnostics {
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Self {
        let n = blocks.first().map_or(0, |b| b.nrows());
        let mut m_n_hat = 0;
        let mut survivor_fraction = Vec::with_capacity(blocks.len());
        for b in blocks {
            let mut off = 0usize;
            for i in 0..n {
                let row = (0..n).filter(|&j| b[(i, j)] != 0.0).count();
                m_n_hat = m_n_hat.max(row);
                off += (0..n).filter(|&j| j != i && b[(i, j)] != 0.0).count();
            }
            let pairs = n * n.saturating_sub(1);
            survivor_fraction.push(if pairs == 0 { 0.0 } else { off as f64 / pairs as f64 });
        }
        Self {
            m_n_hat,
            survivor_fraction,
        }
    }
}

fn assemble_at(
    raw: &[DMatrix<f64>],
    constant: f64,
    kernel: Kernel,
    mode: ThresholdMode,
    n_periods: usize,
) -> Result<(BlockBandedMatrix, LagBlockSet)> {
    let set = soft_threshold_blocks(raw, constant, mode, n_periods)?;
    let m = BlockBandedMatrix::assemble(&set.thresholded, &kernel.weights(set.lag), n_periods)?;
    Ok((m, set))
}

fn pd_floor(raw: &[DMatrix<f64>], margin: f64) -> f64 {
    let r0 = &raw[0];
    margin * (0..r0.nrows()).map(|i| r0[(i, i)]).fold(f64::INFINITY, f64::min)
}

fn is_pd_at(raw: &[DMatrix<f64>], constant: f64, kernel: Kernel, mode: ThresholdMode, n_periods: usize, floor: f64) -> Result<bool> {
    let (m, _) = assemble_at(raw, constant, kernel, mode, n_periods)?;
    Ok(BandedCholesky::factor(&m, floor).is_ok())
}

/// Bounds of the admissible threshold range.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdBounds {
    /// Positive-definiteness lower bound `c`.
    pub c: f64,
    /// Diagonalizing upper bound `C_bar`.
    pub c_bar: f64,
}

/// Locates `c`, the smallest threshold constant from which the assembled
/// covariance stays positive definite up to `C_bar`.
///
/// Positive definiteness is not monotone in the constant, so a plain
/// bisection on `(0, C_bar]` can land below a failing interval. Instead
/// the log grid of `scan_points` constants from `min(0.01, C_bar)` to `C_bar`
/// is descended until the first failure, and the transition between that
/// point and its successor is bisected to the search resolution. Between
/// scanned points the property is assumed to hold. Returns `c = 0` when
/// every scanned point and the unthresholded assembly are positive definite.
///
/// An assembly counts as positive definite when its smallest eigenvalue
/// exceeds `margin` times the smallest lag-0 variance; at the exact
/// boundary the GLS weights are numerically singular.
pub fn pd_lower_bound(
    raw: &[DMatrix<f64>],
    kernel: Kernel,
    mode: ThresholdMode,
    n_periods: usize,
    upper: Option<f64>,
    search: &PdSearch,
) -> Result<ThresholdBounds> {
    let r0 = raw.first().ok_or_else(|| Error::Dimension("no lag blocks".into()))?;
    let lag = raw.len() - 1;
    let gamma_t = threshold_rate(lag, r0.nrows(), n_periods);
    let c_bar = match upper {
        Some(u) => u,
        None => diagonalizing_bound(r0, gamma_t)?,
    };
    let floor = pd_floor(raw, search.margin);
    if !c_bar.is_finite() {
        return Err(Error::InvalidConfig(
            "diagonalizing bound is infinite; supply an explicit upper bound".into(),
        ));
    }
    if !is_pd_at(raw, c_bar, kernel, mode, n_periods, floor)? {
        return Err(Error::UpperBoundNotPositiveDefinite { c_bar, lag });
    }
    if c_bar == 0.0 {
        return Ok(ThresholdBounds { c: 0.0, c_bar });
    }
    let grid = log_grid(GRID_FLOOR.min(c_bar), c_bar, search.scan_points.max(2));
    let mut hi = c_bar;
    let mut failed = None;
    for &m in grid.iter().rev().skip(1) {
        if is_pd_at(raw, m, kernel, mode, n_periods, floor)? {
            hi = m;
        } else {
            failed = Some(m);
            break;
        }
    }
    let mut lo = match failed {
        Some(m) => m,
        None if is_pd_at(raw, 0.0, kernel, mode, n_periods, floor)? => return Ok(ThresholdBounds { c: 0.0, c_bar }),
        None => 0.0,
    };
    // lo fails, hi succeeds.
    while hi - lo > 0.5 * search.resolution {
        let mid = 0.5 * (lo + hi);
        if is_pd_at(raw, mid, kernel, mode, n_periods, floor)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ThresholdBounds { c: hi, c_bar })
}

/// Cross-validation outcome for the threshold constant.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvOutcome {
    pub threshold_constant: f64,
    /// `(M, objective)` pairs in increasing `M`.
    pub curve: Vec<(f64, f64)>,
    pub bounds: ThresholdBounds,
    pub folds: usize,
}

/// Contiguous fold boundaries `[start, end)` splitting `0..n_periods`.
pub fn fold_ranges(n_periods: usize, folds: usize) -> Vec<(usize, usize)> {
    (0..folds)
        .map(|p| (p * n_periods / folds, (p + 1) * n_periods / folds))
        .collect()
}

/// Log-spaced grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![hi],
        _ if hi <= lo => vec![hi],
        _ => {
            let (a, b) = (libm::log(lo), libm::log(hi));
            let step = (b - a) / (points - 1) as f64;
            let mut g: Vec<f64> = (0..points).map(|k| libm::exp(a + step * k as f64)).collect();
            g[0] = lo;
            g[points - 1] = hi;
            g
        }
    }
}

/// Chooses the threshold constant by `P`-fold contiguous cross-validation.
///
/// For each fold the validation covariance is the lag-0 sample covariance
/// of the held-out periods and the candidate is the thresholded lag-0
/// covariance of the remaining periods. The objective is the mean squared
/// Frobenius distance; the grid spans `[max(c, 0.01), C_bar]`.
pub fn cross_validate_threshold(
    residuals: &DMatrix<f64>,
    lag: usize,
    kernel: Kernel,
    mode: ThresholdMode,
    cv: &CvConfig,
) -> Result<CvOutcome> {
    let (n, t_len) = residuals.shape();
    let folds = cv
        .folds
        .unwrap_or_else(|| libm::round(libm::log(t_len as f64)) as usize)
        .max(2);
    if t_len < 2 * folds {
        return Err(Error::InvalidConfig(alloc::format!(
            "cross-validation with {folds} folds needs T >= {}, got {t_len}",
            2 * folds
        )));
    }
    if cv.grid_size == 0 {
        return Err(Error::InvalidConfig("grid size must be positive".into()));
    }
    let raw = lag_autocov(residuals, lag)?;
    let bounds = pd_lower_bound(&raw, kernel, mode, t_len, cv.upper, &cv.pd)?;
    if bounds.c > bounds.c_bar {
        return Err(Error::EmptyAdmissibleInterval {
            c: bounds.c,
            c_bar: bounds.c_bar,
        });
    }
    let lo = if bounds.c > 0.0 { bounds.c } else { GRID_FLOOR.min(bounds.c_bar) };
    let grid = if bounds.c_bar > 0.0 { log_grid(lo, bounds.c_bar, cv.grid_size) } else { vec![0.0] };

    struct Fold {
        validation: DMatrix<f64>,
        train: DMatrix<f64>,
        train_sd: Vec<f64>,
        gamma_t: f64,
    }
    let mut fold_data = Vec::with_capacity(folds);
    for (a, b) in fold_ranges(t_len, folds) {
        let held = residuals.columns(a, b - a);
        let mut validation = DMatrix::zeros(n, n);
        validation.gemm(1.0 / (b - a) as f64, &held, &held.transpose(), 0.0);
        let mut train = DMatrix::zeros(n, n);
        let n_train = t_len - (b - a);
        if a > 0 {
            let part = residuals.columns(0, a);
            train.gemm(1.0, &part, &part.transpose(), 1.0);
        }
        if b < t_len {
            let part = residuals.columns(b, t_len - b);
            train.gemm(1.0, &part, &part.transpose(), 1.0);
        }
        train /= n_train as f64;
        check_variances(&train)?;
        let train_sd = (0..n).map(|i| libm::sqrt(train[(i, i)])).collect();
        fold_data.push(Fold {
            validation,
            train,
            train_sd,
            gamma_t: threshold_rate(lag, n, n_train),
        });
    }

    let mut curve = Vec::with_capacity(grid.len());
    for &m in &grid {
        let mut total = 0.0;
        for f in &fold_data {
            let mut dist = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let est = if i == j {
                        f.train[(i, j)]
                    } else {
                        soft_threshold(f.train[(i, j)], m * f.gamma_t * f.train_sd[i] * f.train_sd[j])
                    };
                    let e = est - f.validation[(i, j)];
                    dist += e * e;
                }
            }
            total += dist;
        }
        curve.push((m, total / folds as f64));
    }
    // Grid minimizer, passing over any candidate whose full assembly is not
    // positive definite (possible between the scanned points).
    let mut order: Vec<usize> = (0..curve.len()).collect();
    order.sort_by(|&a, &b| curve[a].1.total_cmp(&curve[b].1).then(a.cmp(&b)));
    let mut best = None;
    for k in order {
        if is_pd_at(&raw, curve[k].0, kernel, mode, t_len, pd_floor(&raw, cv.pd.margin))? {
            best = Some(curve[k].0);
            break;
        }
    }
    let best = best.ok_or(Error::EmptyAdmissibleInterval {
        c: bounds.c,
        c_bar: bounds.c_bar,
    })?;
    Ok(CvOutcome {
        threshold_constant: best,
        curve,
        bounds,
        folds,
    })
}

/// Assembled covariance estimate with its factorization.
#[derive(Debug, Clone)]
pub struct OmegaEstimate {
    pub matrix: BlockBandedMatrix,
    pub factor: BandedCholesky,
    pub lags: LagBlockSet,
    pub diagnostics: SparsityDiagnostics,
}

/// Lag autocovariances, thresholding, kernel taper and assembly, followed
/// by a Cholesky factorization. A failed factorization reports the PD lower
/// bound for the same lag blocks when it can be located.
pub fn estimate_omega(residuals: &DMatrix<f64>, cfg: &TuningConfig) -> Result<OmegaEstimate> {
    let t_len = residuals.ncols();
    let raw = lag_autocov(residuals, cfg.lag)?;
    let (matrix, lags) = assemble_at(&raw, cfg.threshold_constant, cfg.kernel, cfg.mode, t_len)?;
    let factor = match matrix.cholesky() {
        Ok(f) => f,
        Err(Error::NotPositiveDefinite { row, .. }) => {
            let c_estimate = pd_lower_bound(&raw, cfg.kernel, cfg.mode, t_len, None, &PdSearch::default())
                .ok()
                .map(|b| b.c);
            return Err(Error::OmegaNotPositiveDefinite { row, c_estimate });
        }
        Err(e) => return Err(e),
    };
    let diagnostics = SparsityDiagnostics::from_blocks(&lags.thresholded);
    Ok(OmegaEstimate {
        matrix,
        factor,
        lags,
        diagnostics,
    })
}

/// Heteroskedasticity-only estimate: `I_T ⊗ diag(R_0,11, ..., R_0,NN)`.
pub fn diagonal_omega(residuals: &DMatrix<f64>) -> Result<OmegaEstimate> {
    let raw = lag_autocov(residuals, 0)?;
    check_variances(&raw[0])?;
    let n = raw[0].nrows();
    let diag = DMatrix::from_fn(n, n, |i, j| if i == j { raw[0][(i, i)] } else { 0.0 });
    let matrix = BlockBandedMatrix::block_diagonal(diag.clone(), residuals.ncols())?;
    let factor = matrix.cholesky()?;
    let gamma_t = threshold_rate(0, n, residuals.ncols());
    let c_bar = diagonalizing_bound(&raw[0], gamma_t)?;
    let lags = LagBlockSet {
        tau: threshold_matrix(&raw[0], c_bar, gamma_t),
        raw,
        thresholded: vec![diag],
        lag: 0,
        threshold_constant: c_bar,
        gamma_t,
        mode: ThresholdMode::LagWise,
    };
    let diagnostics = SparsityDiagnostics::from_blocks(&lags.thresholded);
    Ok(OmegaEstimate {
        matrix,
        factor,
        lags,
        diagnostics,
    })
}
