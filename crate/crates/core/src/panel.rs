//! Balanced panel data, design transformations and pooled OLS.
//!
//! Stacked vectors are ordered time-major: row `t * N + i` holds unit `i`
//! at period `t`, so the error vector reads `(u_1', ..., u_T')'` with each
//! `u_t` the length-`N` cross-section at period `t`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dense::spd_inverse_checked;
use crate::error::{Error, Result};
use crate::estimators::{EstimationResult, EstimatorKind};

/// A balanced `N × T` panel with `d` regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n_units: usize,
    n_periods: usize,
    n_regressors: usize,
    // time-major: y[t * N + i]
    y: Vec<f64>,
    // x[(t * N + i) * d + k]
    x: Vec<f64>,
    unit_labels: Option<Vec<String>>,
    time_labels: Option<Vec<String>>,
}

/// One row of a long-form panel file.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRecord {
    pub unit: String,
    pub time: String,
    pub y: f64,
    pub x: Vec<f64>,
}

impl PanelData {
    /// Builds a panel from time-major buffers (`y[t * N + i]`,
    /// `x[(t * N + i) * d + k]`).
    pub fn new(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        if n_units < 2 || n_periods < 2 || n_regressors < 1 {
            return Err(Error::InvalidPanel(alloc::format!(
                "need N >= 2, T >= 2, d >= 1 (got N = {n_units}, T = {n_periods}, d = {n_regressors})"
            )));
        }
        let nt = n_units * n_periods;
        if y.len() != nt || x.len() != nt * n_regressors {
            return Err(Error::Dimension(alloc::format!(
                "expected {nt} responses and {} regressor values, got {} and {}",
                nt * n_regressors,
                y.len(),
                x.len()
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(alloc::format!(
                "non-finite response for unit {} at period {}",
                pos % n_units,
                pos / n_units
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let cell = pos / n_regressors;
            return Err(Error::InvalidPanel(alloc::format!(
                "non-finite regressor {} for unit {} at period {}",
                pos % n_regressors,
                cell % n_units,
                cell / n_units
            )));
        }
        Ok(Self {
            n_units,
            n_periods,
            n_regressors,
            y,
            x,
            unit_labels: None,
            time_labels: None,
        })
    }

    /// Builds a panel by evaluating `y(i, t)` and `x(i, t, k)` on every cell.
    pub fn from_fn(
        n_units: usize,
        n_periods: usize,
        n_regressors: usize,
        mut y: impl FnMut(usize, usize) -> f64,
        mut x: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut ys = Vec::with_capacity(n_units * n_periods);
        let mut xs = Vec::with_capacity(n_units * n_periods * n_regressors);
        for t in 0..n_periods {
            for i in 0..n_units {
                ys.push(y(i, t));
                for k in 0..n_regressors {
                    xs.push(x(i, t, k));
                }
            }
        }
        Self::new(n_units, n_periods, n_regressors, ys, xs)
    }

    pub fn with_labels(mut self, units: Vec<String>, times: Vec<String>) -> Result<Self> {
        if units.len() != self.n_units || times.len() != self.n_periods {
            return Err(Error::Dimension(String::from(
                "label vectors must have lengths N and T",
            )));
        }
        self.unit_labels = Some(units);
        self.time_labels = Some(times);
        Ok(self)
    }

    /// Validates and indexes long-form records.
    ///
    /// Unit and time labels are sorted (numerically when every label of that
    /// kind parses as a number, lexicographically otherwise) and indexed in
    /// that order. Every `(unit, time)` pair must occur exactly once.
    pub fn from_long(records: &[LongRecord]) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidPanel(String::from("no observations")));
        };
        let d = first.x.len();
        if let Some(r) = records.iter().find(|r| r.x.len() != d) {
            return Err(Error::Dimension(alloc::format!(
                "record for unit {:?} at time {:?} has {} regressors, expected {d}",
                r.unit,
                r.time,
                r.x.len()
            )));
        }
        let units = sorted_labels(records.iter().map(|r| r.unit.as_str()));
        let times = sorted_labels(records.iter().map(|r| r.time.as_str()));
        let unit_ix: BTreeMap<&str, usize> =
            units.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let time_ix: BTreeMap<&str, usize> =
            times.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let (n, t_len) = (units.len(), times.len());

        let mut slot: Vec<Option<usize>> = vec![None; n * t_len];
        for (row, r) in records.iter().enumerate() {
            let cell = time_ix[r.time.as_str()] * n + unit_ix[r.unit.as_str()];
            if slot[cell].is_some() {
                return Err(Error::Duplicate {
                    unit: r.unit.clone(),
                    time: r.time.clone(),
                });
            }
            slot[cell] = Some(row);
        }
        let total = slot.iter().filter(|s| s.is_none()).count();
        if total > 0 {
            let mut missing = Vec::new();
            'outer: for u in &units {
                for t in &times {
                    let cell = time_ix[t.as_str()] * n + unit_ix[u.as_str()];
                    if slot[cell].is_none() {
                        missing.push((u.clone(), t.clone()));
                        if missing.len() == 10 {
                            break 'outer;
                        }
                    }
                }
            }
            return Err(Error::Unbalanced { missing, total });
        }

        let mut y = Vec::with_capacity(n * t_len);
        let mut x = Vec::with_capacity(n * t_len * d);
        for s in &slot {
            let r = &records[s.expect("balanced")];
            y.push(r.y);
            x.extend_from_slice(&r.x);
        }
        Self::new(n, t_len, d, y, x)?.with_labels(units, times)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_regressors(&self) -> usize {
        self.n_regressors
    }

    pub fn y(&self, unit: usize, period: usize) -> f64 {
        self.y[period * self.n_units + unit]
    }

    pub fn x(&self, unit: usize, period: usize, k: usize) -> f64 {
        self.x[(period * self.n_units + unit) * self.n_regressors + k]
    }

    pub fn unit_labels(&self) -> Option<&[String]> {
        self.unit_labels.as_deref()
    }

    pub fn time_labels(&self) -> Option<&[String]> {
        self.time_labels.as_deref()
    }
}

fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut uniq: Vec<&str> = labels.collect();
    uniq.sort_unstable();
    uniq.dedup();
    let numeric: Option<Vec<f64>> = uniq.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(vals) = numeric {
        let mut pairs: Vec<(f64, &str)> = vals.into_iter().zip(uniq.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(b.1)));
        return pairs.into_iter().map(|(_, s)| String::from(s)).collect();
    }
    uniq.into_iter().map(String::from).collect()
}

/// Fixed effects, trends and weights applied before estimation.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesignSpec {
    pub unit_fe: bool,
    pub time_fe: bool,
    pub unit_trend: bool,
    /// Per-unit positive weights; rows of unit `i` are scaled by `sqrt(w_i)`.
    pub weights: Option<Vec<f64>>,
}

impl DesignSpec {
    pub fn two_way() -> Self {
        Self {
            unit_fe: true,
            time_fe: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TransformStep {
    Weighted,
    UnitDemeaned,
    TimeDemeaned,
    UnitDetrended,
    /// Sweeps of the alternating projections until the change fell below 1e-12.
    Converged { sweeps: usize },
}

impl fmt::Display for TransformStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformStep::Weighted => f.write_str("weighted by sqrt(unit weight)"),
            TransformStep::UnitDemeaned => f.write_str("unit fixed effects removed"),
            TransformStep::TimeDemeaned => f.write_str("time fixed effects removed"),
            TransformStep::UnitDetrended => f.write_str("unit linear trends removed"),
            TransformStep::Converged { sweeps } => write!(f, "converged after {sweeps} sweep(s)"),
        }
    }
}

/// `Y = X beta + U` in stacked, time-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub n_units: usize,
    pub n_periods: usize,
    pub transform_log: Vec<TransformStep>,
}

impl StackedModel {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }

    /// Row index of unit `i` at period `t`.
    pub fn row(&self, unit: usize, period: usize) -> usize {
        period * self.n_units + unit
    }

    /// Back to panel form; exact inverse of stacking when no transform ran.
    pub fn unstack(&self) -> Result<PanelData> {
        let d = self.x.ncols();
        let mut x = Vec::with_capacity(self.x.len());
        for r in 0..self.x.nrows() {
            for k in 0..d {
                x.push(self.x[(r, k)]);
            }
        }
        PanelData::new(self.n_units, self.n_periods, d, self.y.as_slice().into(), x)
    }
}

const SWEEP_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000;

/// Stacks the panel and applies weighting, within and detrending
/// transformations, in that order.
///
/// Combinations whose projections do not commute (time effects together
/// with unit trends) are iterated until no entry moves by more than 1e-12.
pub fn build_stacked(data: &PanelData, spec: &DesignSpec) -> Result<StackedModel> {
    let (n, t_len, d) = (data.n_units, data.n_periods, data.n_regressors);
    let nt = n * t_len;
    let mut log = Vec::new();

    let mut y = DVector::from_column_slice(&data.y);
    let mut x = DMatrix::from_fn(nt, d, |r, k| data.x[r * d + k]);

    if spec.unit_trend && t_len < 3 {
        return Err(Error::InvalidDesign(alloc::format!(
            "unit trends need at least 3 periods alongside the intercept, got T = {t_len}"
        )));
    }

    if let Some(w) = &spec.weights {
        if w.len() != n {
            return Err(Error::InvalidDesign(alloc::format!(
                "expected {n} unit weights, got {}",
                w.len()
            )));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidDesign(alloc::format!(
                "weight for unit {i} must be positive and finite"
            )));
        }
        let root: Vec<f64> = w.iter().map(|v| libm::sqrt(*v)).collect();
        for r in 0..nt {
            let s = root[r % n];
            y[r] *= s;
            for k in 0..d {
                x[(r, k)] *= s;
            }
        }
        log.push(TransformStep::Weighted);
    }

    let mut ops: Vec<Projection> = Vec::new();
    if spec.unit_fe && !spec.unit_trend {
        ops.push(Projection::UnitMean);
        log.push(TransformStep::UnitDemeaned);
    }
    if spec.time_fe {
        ops.push(Projection::TimeMean);
        log.push(TransformStep::TimeDemeaned);
    }
    if spec.unit_trend {
        ops.push(Projection::UnitTrend);
        if spec.unit_fe {
            log.push(TransformStep::UnitDemeaned);
        }
        log.push(TransformStep::UnitDetrended);
    }

    if !ops.is_empty() {
        let mut sweeps = residualize(y.as_mut_slice(), n, t_len, &ops)?;
        for k in 0..d {
            let mut col: Vec<f64> = x.column(k).iter().copied().collect();
            sweeps = sweeps.max(residualize(&mut col, n, t_len, &ops)?);
            x.column_mut(k).copy_from_slice(&col);
        }
        log.push(TransformStep::Converged { sweeps });
    }

    Ok(StackedModel {
        y,
        x,
        n_units: n,
        n_periods: t_len,
        transform_log: log,
    })
}

/// Least-squares dummy-variable design: the raw regressors followed by
/// unit dummies (all `N`) and time dummies (periods `2..T`) as requested.
pub fn build_dummy_stacked(data: &PanelData, unit_fe: bool, time_fe: bool) -> Result<StackedModel> {
    let mut base = build_stacked(data, &DesignSpec::default())?;
    let (n, t_len, d) = (data.n_units, data.n_periods, data.n_regressors);
    let extra_units = if unit_fe { n } else { 0 };
    let extra_times = if time_fe { t_len - 1 } else { 0 };
    let cols = d + extra_units + extra_times;
    let x = DMatrix::from_fn(n * t_len, cols, |r, c| {
        let (t, i) = (r / n, r % n);
        if c < d {
            base.x[(r, c)]
        } else if c < d + extra_units {
            f64::from(u8::from(c - d == i))
        } else {
            f64::from(u8::from(c - d - extra_units + 1 == t))
        }
    });
    base.x = x;
    Ok(base)
}

#[derive(Clone, Copy)]
enum Projection {
    UnitMean,
    TimeMean,
    UnitTrend,
}

fn residualize(v: &mut [f64], n: usize, t_len: usize, ops: &[Projection]) -> Result<usize> {
    let mut prev = v.to_vec();
    for sweep in 1..=MAX_SWEEPS {
        for op in ops {
            match op {
                Projection::UnitMean => {
                    for i in 0..n {
                        let m = (0..t_len).map(|t| v[t * n + i]).sum::<f64>() / t_len as f64;
                        for t in 0..t_len {
                            v[t * n + i] -= m;
                        }
                    }
                }
                Projection::TimeMean => {
                    for t in 0..t_len {
                        let row = &mut v[t * n..(t + 1) * n];
                        let m = row.iter().sum::<f64>() / n as f64;
                        row.iter_mut().for_each(|e| *e -= m);
                    }
                }
                Projection::UnitTrend => detrend_units(v, n, t_len)?,
            }
        }
        if ops.len() == 1 || !needs_iteration(ops) {
            return Ok(sweep);
        }
        let scale = v.iter().fold(1.0f64, |a, e| a.max(e.abs()));
        let change = v
            .iter()
            .zip(&prev)
            .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        if change <= SWEEP_TOL * scale {
            return Ok(sweep);
        }
        prev.copy_from_slice(v);
    }
    Ok(MAX_SWEEPS)
}

// Unit and time means commute on a balanced panel; only trends interact.
fn needs_iteration(ops: &[Projection]) -> bool {
    ops.iter().any(|o| matches!(o, Projection::UnitTrend)) && ops.iter().any(|o| matches!(o, Projection::TimeMean))
}

fn detrend_units(v: &mut [f64], n: usize, t_len: usize) -> Result<()> {
    let tbar = (t_len as f64 - 1.0) / 2.0;
    let sxx: f64 = (0..t_len).map(|t| (t as f64 - tbar) * (t as f64 - tbar)).sum();
    if !(sxx > 0.0) || t_len < 3 {
        return Err(Error::InvalidDesign(String::from(
            "per-unit trend regressor is rank deficient",
        )));
    }
    for i in 0..n {
        let mean = (0..t_len).map(|t| v[t * n + i]).sum::<f64>() / t_len as f64;
        let sxy: f64 = (0..t_len).map(|t| (t as f64 - tbar) * (v[t * n + i] - mean)).sum();
        let slope = sxy / sxx;
        for t in 0..t_len {
            v[t * n + i] -= mean + slope * (t as f64 - tbar);
        }
    }
    Ok(())
}

/// Standard-error flavour for pooled OLS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OlsSeKind {
    Iid,
    White,
    ClusterByUnit,
}

/// Pooled OLS fit, keeping the residuals for covariance estimation.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// Time-major residuals, aligned with the model rows.
    pub residuals: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
    n_units: usize,
    n_periods: usize,
}

impl OlsFit {
    /// Residuals as an `N × T` matrix (row = unit, column = period).
    pub fn residual_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_units, self.n_periods, self.residuals.as_slice())
    }

    pub fn result(&self, model: &StackedModel, kind: OlsSeKind) -> EstimationResult {
        let vcov = ols_vcov_with(model, &self.residuals, &self.xtx_inv, kind);
        EstimationResult::new(EstimatorKind::Ols(kind), self.beta.clone(), vcov, None)
    }
}

pub fn ols(model: &StackedModel) -> Result<OlsFit> {
    let xtx = model.x.tr_mul(&model.x);
    let xtx_inv = spd_inverse_checked(&xtx)?;
    let beta = &xtx_inv * model.x.tr_mul(&model.y);
    let residuals = &model.y - &model.x * &beta;
    Ok(OlsFit {
        beta,
        residuals,
        xtx_inv,
        n_units: model.n_units,
        n_periods: model.n_periods,
    })
}

/// Covariance of the OLS coefficients under the requested assumption.
pub fn ols_vcov(model: &StackedModel, residuals: &DVector<f64>, kind: OlsSeKind) -> Result<DMatrix<f64>> {
    if residuals.len() != model.n_obs() {
        return Err(Error::Dimension(String::from(
            "residual vector does not match the model rows",
        )));
    }
    let xtx_inv = spd_inverse_checked(&model.x.tr_mul(&model.x))?;
    Ok(ols_vcov_with(model, residuals, &xtx_inv, kind))
}

pub fn ols_standard_errors(
    model: &StackedModel,
    residuals: &DVector<f64>,
    kind: OlsSeKind,
) -> Result<DVector<f64>> {
    let v = ols_vcov(model, residuals, kind)?;
    Ok(DVector::from_fn(v.nrows(), |k, _| libm::sqrt(v[(k, k)].max(0.0))))
}

fn ols_vcov_with(
    model: &StackedModel,
    resid: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
    kind: OlsSeKind,
) -> DMatrix<f64> {
    let d = model.x.ncols();
    let nt = model.n_obs();
    let mut v = match kind {
        OlsSeKind::Iid => {
            let dof = nt.saturating_sub(d).max(1) as f64;
            xtx_inv * (resid.norm_squared() / dof)
        }
        OlsSeKind::White => {
            let mut meat = DMatrix::zeros(d, d);
            for r in 0..nt {
                let xr = model.x.row(r);
                meat += xr.transpose() * xr * (resid[r] * resid[r]);
            }
            xtx_inv * meat * xtx_inv
        }
        OlsSeKind::ClusterByUnit => {
            let n = model.n_units;
            let mut meat = DMatrix::zeros(d, d);
            for i in 0..n {
                let mut score = DVector::zeros(d);
                for t in 0..model.n_periods {
                    let r = t * n + i;
                    score += model.x.row(r).transpose() * resid[r];
                }
                meat += &score * score.transpose();
            }
            xtx_inv * meat * xtx_inv
        }
    };
    crate::dense::symmetrize(&mut v);
    v
}
