//! Simulation design with clustered cross-sectional correlation,
//! heteroskedasticity and unit-specific AR-type serial correlation, and the
//! replication harness comparing OLS, FGLS(Diag), FGLS and oracle GLS.
//!
//! Units are grouped into `G` equal clusters. Within a cluster the
//! correlation matrix `R_eta` has Uniform(0, gamma) off-diagonals; across
//! clusters it is zero. With `D = diag(d_i)`, `d_i ~ Uniform(1, m)`, the
//! error covariance at lag `h` is `Sigma_u,ij * sigma_ij^|h|` where
//! `Sigma_u = D R_eta D`, `sigma_ii = rho_i` and `sigma_ij = rho_i rho_j`.
//! The regressor uses `Sigma_x = R_eta` and its own `rho`.
//!
//! Because nothing correlates across clusters, the `NT × NT` covariances are
//! block diagonal over clusters after a permutation; square roots and
//! solves work cluster by cluster and agree exactly with the full matrix.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::block::sym_sqrt_dense;
use crate::error::{Error, Result};
use crate::estimators::{fgls_diag, gls, gls_oracle, tune_and_estimate, CovarianceSolver, EstimatorKind, TuningRequest};
use crate::normal;
use crate::panel::{build_dummy_stacked, build_stacked, ols, DesignSpec, OlsSeKind, PanelData};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    /// Number of equal-size clusters `G`.
    pub clusters: usize,
    /// Upper bound of the within-cluster correlations.
    pub gamma: f64,
    /// Upper bound `m` of the heteroskedasticity scales `d_i`.
    pub hetero_max: f64,
    pub rho_max: f64,
    pub beta0: f64,
    /// Variance of the unit and time effects.
    pub fe_var: f64,
    /// Variance of the innovations behind the errors.
    pub error_noise_var: f64,
    /// Variance of the innovations behind the regressor.
    pub x_noise_var: f64,
    pub seed: u64,
    /// Redraw `R_eta`, `D` and `rho` every replication; otherwise draw them
    /// once per experiment.
    pub redraw_structure: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_units: 50,
            n_periods: 50,
            clusters: 25,
            gamma: 0.3,
            hetero_max: libm::sqrt(5.0),
            rho_max: 0.6,
            beta0: 1.0,
            fe_var: 0.5,
            error_noise_var: 5.0,
            x_noise_var: 1.0,
            seed: 0,
            redraw_structure: true,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_units < 2 || self.n_periods < 2 {
            return bad("simulation needs N >= 2 and T >= 2".to_string());
        }
        if self.clusters == 0 || self.n_units % self.clusters != 0 {
            return bad(alloc::format!("N = {} is not divisible by G = {}", self.n_units, self.clusters));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(alloc::format!("gamma = {} outside [0, 1)", self.gamma));
        }
        if !(0.0..1.0).contains(&self.rho_max) {
            return bad(alloc::format!("rho_max = {} outside [0, 1)", self.rho_max));
        }
        if !(self.hetero_max >= 1.0) {
            return bad(alloc::format!("m = {} must be at least 1", self.hetero_max));
        }
        for (name, v) in [
            ("fe_var", self.fe_var),
            ("error_noise_var", self.error_noise_var),
            ("x_noise_var", self.x_noise_var),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(alloc::format!("{name} = {v} must be a finite non-negative variance"));
            }
        }
        Ok(())
    }

    pub fn cluster_size(&self) -> usize {
        self.n_units / self.clusters
    }
}

/// One draw of the covariance structure.
#[derive(Debug, Clone)]
pub struct DgpCovariances {
    pub sigma_u: DMatrix<f64>,
    /// `Sigma_x = R_eta`.
    pub sigma_x: DMatrix<f64>,
    pub rho_u: Vec<f64>,
    pub rho_x: Vec<f64>,
    n_periods: usize,
    cluster_size: usize,
    u_roots: Vec<DMatrix<f64>>,
    x_roots: Vec<DMatrix<f64>>,
}

fn serial_factor(rho: &[f64], i: usize, j: usize, lag: usize) -> f64 {
    let s = if i == j { rho[i] } else { rho[i] * rho[j] };
    libm::pow(s, lag as f64)
}

fn cov_entry(sigma: &DMatrix<f64>, rho: &[f64], t: usize, i: usize, s: usize, j: usize) -> f64 {
    let lag = t.abs_diff(s);
    if sigma[(i, j)] == 0.0 {
        return 0.0;
    }
    sigma[(i, j)] * serial_factor(rho, i, j, lag)
}

fn dense_cov(sigma: &DMatrix<f64>, rho: &[f64], n: usize, t_len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n * t_len, n * t_len, |r, c| cov_entry(sigma, rho, r / n, r % n, c / n, c % n))
}

/// Covariance of cluster `g` in cluster-local, time-major order
/// (row `t * k + a` is the `a`-th unit of the cluster at period `t`).
fn cluster_cov(sigma: &DMatrix<f64>, rho: &[f64], g: usize, k: usize, t_len: usize) -> DMatrix<f64> {
    let base = g * k;
    DMatrix::from_fn(k * t_len, k * t_len, |r, c| {
        cov_entry(sigma, rho, r / k, base + r % k, c / k, base + c % k)
    })
}

impl DgpCovariances {
    pub fn n_units(&self) -> usize {
        self.sigma_u.nrows()
    }

    pub fn omega_u_entry(&self, t: usize, i: usize, s: usize, j: usize) -> f64 {
        cov_entry(&self.sigma_u, &self.rho_u, t, i, s, j)
    }

    /// `Omega_U` as a dense `NT × NT` matrix in time-major order.
    pub fn omega_u_dense(&self) -> DMatrix<f64> {
        dense_cov(&self.sigma_u, &self.rho_u, self.n_units(), self.n_periods)
    }

    pub fn omega_x_dense(&self) -> DMatrix<f64> {
        dense_cov(&self.sigma_x, &self.rho_x, self.n_units(), self.n_periods)
    }

    /// Covariance of the generated errors, `error_noise_var * Omega_U`, in a
    /// form that solves cluster by cluster.
    pub fn error_covariance(&self, error_noise_var: f64) -> Result<ClusterCovariance> {
        let k = self.cluster_size;
        let clusters = self.n_units() / k;
        let factors = (0..clusters)
            .map(|g| {
                let m = cluster_cov(&self.sigma_u, &self.rho_u, g, k, self.n_periods) * error_noise_var;
                m.cholesky().ok_or(Error::NotPositiveDefinite { row: g, pivot: f64::NAN })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClusterCovariance {
            n_units: self.n_units(),
            n_periods: self.n_periods,
            cluster_size: k,
            factors,
        })
    }
}

/// Block-diagonal (over clusters) covariance with one Cholesky per cluster.
#[derive(Debug, Clone)]
pub struct ClusterCovariance {
    n_units: usize,
    n_periods: usize,
    cluster_size: usize,
    factors: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl CovarianceSolver for ClusterCovariance {
    fn dim(&self) -> usize {
        self.n_units * self.n_periods
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::Dimension("right-hand side does not match covariance".into()));
        }
        let (n, k, t_len) = (self.n_units, self.cluster_size, self.n_periods);
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for (g, chol) in self.factors.iter().enumerate() {
            let row = |local: usize| (local / k) * n + g * k + local % k;
            let local = DMatrix::from_fn(k * t_len, rhs.ncols(), |r, c| rhs[(row(r), c)]);
            let sol = chol.solve(&local);
            for r in 0..k * t_len {
                for c in 0..rhs.ncols() {
                    out[(row(r), c)] = sol[(r, c)];
                }
            }
        }
        Ok(out)
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn normal_draw<R: Rng>(rng: &mut R, variance: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    libm::sqrt(variance) * z
}


/// Draws `R_eta`, `D` and the serial-correlation parameters.
///
/// With `sigma_ij = rho_i rho_j` across units the assembled covariance is not
/// positive definite for every draw: strong within-cluster correlation
/// combined with strong serial correlation breaks it (at `gamma = 0.7`
/// roughly one two-unit cluster in ten). The parameters of an offending
/// cluster are redrawn, up to [`CLUSTER_REDRAWS`] times, before giving up;
/// accepted structures are therefore drawn conditionally on positive
/// definiteness.
pub fn build_dgp_covariances<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<DgpCovariances> {
    cfg.validate()?;
    let (n, k, t_len) = (cfg.n_units, cfg.cluster_size(), cfg.n_periods);
    let mut r_eta = DMatrix::identity(n, n);
    for g in 0..cfg.clusters {
        draw_cluster_correlations(&mut r_eta, g, k, cfg.gamma, rng);
    }
    let mut d: Vec<f64> = (0..n).map(|_| uniform(rng, 1.0, cfg.hetero_max)).collect();
    let mut rho_u: Vec<f64> = (0..n).map(|_| uniform(rng, 0.0, cfg.rho_max)).collect();
    let mut rho_x: Vec<f64> = (0..n).map(|_| uniform(rng, 0.0, cfg.rho_max)).collect();

    let mut u_roots = Vec::with_capacity(cfg.clusters);
    let mut x_roots = Vec::with_capacity(cfg.clusters);
    for g in 0..cfg.clusters {
        let units = g * k..(g + 1) * k;
        let mut attempt = 0;
        loop {
            let sigma_u = cluster_sigma(&r_eta, &d, g, k);
            let sigma_x = r_eta.view((g * k, g * k), (k, k)).into_owned();
            let cu = cluster_cov(&sigma_u, &rho_u[units.clone()], 0, k, t_len);
            let cx = cluster_cov(&sigma_x, &rho_x[units.clone()], 0, k, t_len);
            let lo = cu.clone().symmetric_eigenvalues().min().min(cx.clone().symmetric_eigenvalues().min());
            if lo > 0.0 {
                u_roots.push(sym_sqrt_dense(&cu)?);
                x_roots.push(sym_sqrt_dense(&cx)?);
                break;
            }
            attempt += 1;
            if attempt > CLUSTER_REDRAWS {
                return Err(Error::NotPositiveDefinite { row: g * k * t_len, pivot: lo });
            }
            draw_cluster_correlations(&mut r_eta, g, k, cfg.gamma, rng);
            for i in units.clone() {
                d[i] = uniform(rng, 1.0, cfg.hetero_max);
                rho_u[i] = uniform(rng, 0.0, cfg.rho_max);
                rho_x[i] = uniform(rng, 0.0, cfg.rho_max);
            }
        }
    }
    let sigma_u = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        d[a] * r_eta[(a, b)] * d[b]
    });
    Ok(DgpCovariances {
        sigma_u,
        sigma_x: r_eta,
        rho_u,
        rho_x,
        n_periods: t_len,
        cluster_size: k,
        u_roots,
        x_roots,
    })
}

/// Redraw budget per cluster for a positive definite structure.
pub const CLUSTER_REDRAWS: usize = 1000;

fn draw_cluster_correlations<R: Rng>(r_eta: &mut DMatrix<f64>, g: usize, k: usize, gamma: f64, rng: &mut R) {
    for a in 0..k {
        for b in (a + 1)..k {
            let v = uniform(rng, 0.0, gamma);
            r_eta[(g * k + a, g * k + b)] = v;
            r_eta[(g * k + b, g * k + a)] = v;
        }
    }
}

fn cluster_sigma(r_eta: &DMatrix<f64>, d: &[f64], g: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |a, b| {
        let (a, b) = (a.min(b), a.max(b));
        d[g * k + a] * r_eta[(g * k + a, g * k + b)] * d[g * k + b]
    })
}

/// `y_it = alpha_i + mu_t + beta0 x_it + u_it` with
/// `U = Omega_U^(1/2) zeta` and `X = Omega_X^(1/2) xi`.
pub fn simulate_panel<R: Rng>(cfg: &DgpConfig, covs: &DgpCovariances, rng: &mut R) -> Result<PanelData> {
    let (n, k, t_len) = (cfg.n_units, covs.cluster_size, cfg.n_periods);
    let mut u = vec![0.0; n * t_len];
    let mut x = vec![0.0; n * t_len];
    for (roots, out, var) in [
        (&covs.u_roots, &mut u, cfg.error_noise_var),
        (&covs.x_roots, &mut x, cfg.x_noise_var),
    ] {
        for (g, root) in roots.iter().enumerate() {
            let noise = DVector::from_fn(k * t_len, |_, _| normal_draw(rng, var));
            let draw = root * noise;
            for (local, v) in draw.iter().enumerate() {
                out[(local / k) * n + g * k + local % k] = *v;
            }
        }
    }
    let alpha: Vec<f64> = (0..n).map(|_| normal_draw(rng, cfg.fe_var)).collect();
    let mu: Vec<f64> = (0..t_len).map(|_| normal_draw(rng, cfg.fe_var)).collect();
    let y: Vec<f64> = (0..n * t_len)
        .map(|r| alpha[r % n] + mu[r / n] + cfg.beta0 * x[r] + u[r])
        .collect();
    PanelData::new(n, t_len, 1, y, x)
}

/// Which estimators a replication runs. OLS always runs as the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorSet {
    pub fgls_diag: bool,
    pub fgls: bool,
    pub oracle: bool,
}

impl Default for EstimatorSet {
    fn default() -> Self {
        Self {
            fgls_diag: true,
            fgls: true,
            oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentSpec {
    pub dgp: DgpConfig,
    pub reps: usize,
    pub estimators: EstimatorSet,
    pub tuning: TuningRequest,
    /// Size of the tests of `beta = beta0`.
    pub level: f64,
}

impl ExperimentSpec {
    /// Bandwidth 3, cross-validated threshold, Bartlett kernel, 5% tests.
    pub fn new(dgp: DgpConfig, reps: usize) -> Self {
        Self {
            dgp,
            reps,
            estimators: EstimatorSet::default(),
            tuning: TuningRequest {
                lag: Some(3),
                ..TuningRequest::default()
            },
            level: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepEstimate {
    pub kind: EstimatorKind,
    pub beta: f64,
    pub se: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepOutcome {
    pub rep: usize,
    pub estimates: Vec<RepEstimate>,
    pub threshold_constant: Option<f64>,
}

fn rep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STRUCTURE_STREAM: u64 = u64::MAX;

/// Covariance structure shared by every replication in fixed-structure mode.
pub fn fixed_structure(cfg: &DgpConfig) -> Result<DgpCovariances> {
    build_dgp_covariances(cfg, &mut rep_rng(cfg.seed, STRUCTURE_STREAM))
}

/// Covariances and panel of replication `rep`; each replication owns the
/// ChaCha8 stream `rep` under the experiment seed.
pub fn draw_replication(cfg: &DgpConfig, rep: usize, shared: Option<&DgpCovariances>) -> Result<(DgpCovariances, PanelData)> {
    let mut rng = rep_rng(cfg.seed, rep as u64);
    let covs = match shared {
        Some(c) => c.clone(),
        None => build_dgp_covariances(cfg, &mut rng)?,
    };
    let panel = simulate_panel(cfg, &covs, &mut rng)?;
    Ok((covs, panel))
}

/// One replication: two-way demeaning, OLS with unit-clustered standard
/// errors, then the requested GLS-type estimators.
pub fn run_replication(spec: &ExperimentSpec, rep: usize, shared: Option<&DgpCovariances>) -> Result<RepOutcome> {
    let cfg = &spec.dgp;
    let (covs, panel) = draw_replication(cfg, rep, shared)?;
    let crit = normal::quantile(1.0 - spec.level / 2.0);
    let record = |kind, beta: f64, se: f64| RepEstimate {
        kind,
        beta,
        se,
        reject: ((beta - cfg.beta0) / se).abs() > crit,
    };

    let model = build_stacked(&panel, &DesignSpec::two_way())?;
    let fit = ols(&model)?;
    let ols_res = fit.result(&model, OlsSeKind::ClusterByUnit);
    let mut estimates = vec![record(ols_res.kind, ols_res.beta[0], ols_res.se[0])];

    if spec.estimators.fgls_diag {
        let r = fgls_diag(&model, &fit)?;
        estimates.push(record(r.kind, r.beta[0], r.se[0]));
    }
    let mut threshold_constant = None;
    if spec.estimators.fgls {
        let (est, prov) = tune_and_estimate(&fit.residual_matrix(), &spec.tuning)?;
        let r = gls(&model, &est.factor, EstimatorKind::Fgls)?;
        threshold_constant = Some(prov.config.threshold_constant);
        estimates.push(record(r.kind, r.beta[0], r.se[0]));
    }
    if spec.estimators.oracle {
        let lsdv = build_dummy_stacked(&panel, true, true)?;
        let omega = covs.error_covariance(cfg.error_noise_var)?;
        let r = gls_oracle(&lsdv, &omega)?;
        estimates.push(record(r.kind, r.beta[0], r.se[0]));
    }
    Ok(RepOutcome {
        rep,
        estimates,
        threshold_constant,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorSummary {
    pub kind: EstimatorKind,
    pub mean_beta: f64,
    pub std_beta: f64,
    /// Mean squared error relative to OLS.
    pub rmse_ratio: f64,
    pub mean_se: f64,
    pub std_se: f64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkippedRep {
    pub rep: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McExperimentReport {
    pub spec: ExperimentSpec,
    pub reps_used: usize,
    pub skipped: Vec<SkippedRep>,
    pub rows: Vec<EstimatorSummary>,
    pub mean_threshold_constant: Option<f64>,
}

impl McExperimentReport {
    pub fn row(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Aggregates replication outcomes given in replication order. Failed
/// replications are listed; more than 2% failures is an error.
pub fn summarize(spec: &ExperimentSpec, outcomes: Vec<Result<RepOutcome>>) -> Result<McExperimentReport> {
    let reps = outcomes.len();
    let mut ok = Vec::with_capacity(reps);
    let mut skipped = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => ok.push(r),
            Err(e) => skipped.push(SkippedRep {
                rep,
                reason: e.to_string(),
            }),
        }
    }
    if skipped.len() * 50 > reps || ok.is_empty() {
        return Err(Error::SkipRateExceeded {
            skipped: skipped.len(),
            reps,
        });
    }
    let beta0 = spec.dgp.beta0;
    let kinds: Vec<EstimatorKind> = ok[0].estimates.iter().map(|e| e.kind).collect();
    let mse = |k: usize| ok.iter().map(|o| { let e = o.estimates[k].beta - beta0; e * e }).sum::<f64>() / ok.len() as f64;
    let mse_ols = mse(0);
    let rows = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let betas: Vec<f64> = ok.iter().map(|o| o.estimates[k].beta).collect();
            let ses: Vec<f64> = ok.iter().map(|o| o.estimates[k].se).collect();
            let (mean_beta, std_beta) = mean_std(&betas);
            let (mean_se, std_se) = mean_std(&ses);
            let rejects = ok.iter().filter(|o| o.estimates[k].reject).count();
            EstimatorSummary {
                kind,
                mean_beta,
                std_beta,
                rmse_ratio: if k == 0 { 1.0 } else { mse(k) / mse_ols },
                mean_se,
                std_se,
                rejection_rate: rejects as f64 / ok.len() as f64,
            }
        })
        .collect();
    let ms: Vec<f64> = ok.iter().filter_map(|o| o.threshold_constant).collect();
    Ok(McExperimentReport {
        spec: spec.clone(),
        reps_used: ok.len(),
        skipped,
        rows,
        mean_threshold_constant: (!ms.is_empty()).then(|| ms.iter().sum::<f64>() / ms.len() as f64),
    })
}

/// Runs every replication in order on the current thread.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<McExperimentReport> {
    spec.dgp.validate()?;
    if spec.reps == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    let shared = if spec.dgp.redraw_structure { None } else { Some(fixed_structure(&spec.dgp)?) };
    let outcomes = (0..spec.reps).map(|rep| run_replication(spec, rep, shared.as_ref())).collect();
    summarize(spec, outcomes)
}
