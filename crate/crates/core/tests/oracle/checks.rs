//! Library-versus-oracle comparisons shared by the integration tests and
//! the acceptance target.

use super::*;
use pfgls_core::covariance::{estimate_omega, Kernel, ThresholdMode, TuningConfig};
use pfgls_core::estimators::{gls, EstimatorKind};
use pfgls_core::panel::{ols, StackedModel};
use pfgls_core::{block::block_norm_bound_dense, BlockBandedMatrix, DMatrix, DVector, Error};

pub fn to_dmatrix(a: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

pub fn from_dmatrix(a: &DMatrix<f64>) -> Mat {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

fn model(x: &Mat, y: &[f64], n: usize, t_len: usize) -> StackedModel {
    StackedModel {
        y: DVector::from_column_slice(y),
        x: to_dmatrix(x),
        n_units: n,
        n_periods: t_len,
        transform_log: Vec::new(),
    }
}

pub fn diagonalizing_constant(u: &Mat, lag: usize) -> f64 {
    let (n, t_len) = (u.len(), u[0].len());
    let g = rate(lag, n, t_len);
    let mut best = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let s = (autocov(u, 0, i, i) * autocov(u, 0, j, j)).sqrt();
                best = best.max(autocov(u, 0, i, j).abs() / s);
            }
        }
    }
    best / g
}

/// Outcome of one random dense-equivalence instance.
#[derive(Debug)]
pub enum Equivalence {
    /// Both routes factor; largest absolute discrepancy over the assembled
    /// matrix, the Cholesky factor, a solve and the GLS coefficients/covariance.
    Match { n: usize, t: usize, max_err: f64 },
    /// Both routes agree that the assembled matrix is not positive definite.
    BothIndefinite,
    Disagree(String),
}

pub fn dense_equivalence_instance(seed: u64) -> Equivalence {
    let mut r = rng(seed);
    let n = r.random_range(2..=8usize);
    let t_len = r.random_range((2 * n).max(6)..=(500 / n).min(60));
    let lag = r.random_range(0..=3usize).min(t_len - 2);
    let kernel = if r.random_bool(0.75) { Kernel::Bartlett } else { Kernel::Truncated };
    let universal = r.random_bool(0.3);
    let rho = r.random_range(0.0..0.7);
    let load = r.random_range(0.0..1.0);
    let u = correlated_series(&mut r, n, t_len, rho, load);
    let m = diagonalizing_constant(&u, lag) * r.random_range(0.2..1.5);

    let weights: Vec<f64> = match kernel {
        Kernel::Bartlett => (0..=lag).map(|h| 1.0 - h as f64 / (lag + 1) as f64).collect(),
        Kernel::Truncated => vec![1.0; lag + 1],
    };
    let dense = omega_dense(&u, lag, m, &weights, universal);
    let cfg = TuningConfig {
        lag,
        threshold_constant: m,
        kernel,
        mode: if universal { ThresholdMode::Universal } else { ThresholdMode::LagWise },
    };
    let lib = estimate_omega(&to_dmatrix(&u), &cfg);
    let dense_l = cholesky(&dense);
    let est = match (lib, dense_l.as_ref()) {
        (Err(Error::OmegaNotPositiveDefinite { .. }), None) => return Equivalence::BothIndefinite,
        (Ok(est), Some(_)) => est,
        (l, d) => {
            return Equivalence::Disagree(format!(
                "seed {seed}: library ok = {}, dense factor ok = {}",
                l.is_ok(),
                d.is_some()
            ))
        }
    };
    let dense_l = dense_l.unwrap();
    let nt = n * t_len;
    let mut err = max_abs_diff(&from_dmatrix(&est.matrix.to_dense()), &dense);
    err = err.max(max_abs_diff(&from_dmatrix(&est.factor.factor_dense()), &dense_l));

    let rhs: Mat = (0..nt).map(|_| vec![gauss(&mut r), gauss(&mut r)]).collect();
    let banded_sol = est.factor.solve(&to_dmatrix(&rhs)).expect("solve");
    err = err.max(max_abs_diff(&from_dmatrix(&banded_sol), &chol_solve(&dense_l, &rhs)));

    let x: Mat = (0..nt).map(|_| vec![gauss(&mut r), gauss(&mut r)]).collect();
    let y: Vec<f64> = (0..nt).map(|k| x[k][0] - 0.5 * x[k][1] + gauss(&mut r)).collect();
    let res = gls(&model(&x, &y, n, t_len), &est.factor, EstimatorKind::Fgls).expect("gls");
    let (beta, vcov) = dense_gls(&dense, &x, &y).expect("dense gls");
    for k in 0..2 {
        err = err.max((res.beta[k] - beta[k]).abs());
        for l in 0..2 {
            err = err.max((res.vcov[(k, l)] - vcov[k][l]).abs());
        }
    }
    Equivalence::Match { n, t: t_len, max_err: err }
}

/// `(library bound, independent bound, dense spectral norm)` for a random
/// symmetric block matrix; odd seeds use the block-banded type.
pub fn block_bound_instance(seed: u64) -> (f64, f64, f64) {
    let mut r = rng(seed);
    let b = r.random_range(1..=5usize);
    let nb = r.random_range(2..=6usize);
    let dim = b * nb;
    let (lib_bound, dense) = if seed % 2 == 1 {
        let band = r.random_range(0..nb);
        let blocks: Vec<DMatrix<f64>> = (0..=band)
            .map(|h| {
                let a = DMatrix::from_fn(b, b, |_, _| gauss(&mut r));
                if h == 0 {
                    (&a + a.transpose()) * 0.5
                } else {
                    a
                }
            })
            .collect();
        let m = BlockBandedMatrix::assemble(&blocks, &vec![1.0; band + 1], nb).expect("assemble");
        (m.block_norm_bound(), from_dmatrix(&m.to_dense()))
    } else {
        let mut a = zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                // sparse-ish, heavy-tailed entries
                let v = if r.random_bool(0.6) { gauss(&mut r) * r.random_range(0.1..4.0) } else { 0.0 };
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        (block_norm_bound_dense(&to_dmatrix(&a), b).expect("bound"), a)
    };
    let mut oracle_bound = 0.0f64;
    for bi in 0..nb {
        let mut row = 0.0;
        for bj in 0..nb {
            let blk: Mat = (0..b).map(|i| (0..b).map(|j| dense[bi * b + i][bj * b + j]).collect()).collect();
            row += spectral_norm(&blk);
        }
        oracle_bound = oracle_bound.max(row);
    }
    let norm = jacobi_eigenvalues(&dense).into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (lib_bound, oracle_bound, norm)
}

/// FGLS with `Omega = I` against Householder least squares and the
/// library OLS; returns the largest coefficient discrepancy.
pub fn identity_reduction(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, t_len, d) = (r.random_range(2..8usize), r.random_range(3..30usize), r.random_range(1..4usize));
    let nt = n * t_len;
    let x: Mat = (0..nt).map(|_| (0..d).map(|_| gauss(&mut r)).collect()).collect();
    let y: Vec<f64> = (0..nt).map(|k| x[k].iter().sum::<f64>() + gauss(&mut r)).collect();
    let mdl = model(&x, &y, n, t_len);
    let omega = BlockBandedMatrix::identity(n, t_len);
    let f = pfgls_core::fgls(&mdl, &omega).expect("fgls");
    let o = ols(&mdl).expect("ols");
    let qr = lstsq(&x, &y);
    (0..d)
        .map(|k| (f.beta[k] - qr[k]).abs().max((f.beta[k] - o.beta[k]).abs()))
        .fold(0.0, f64::max)
}

/// Lag-0 estimate thresholded at or above the diagonalizing constant
/// against the weighted-least-squares closed form with weights
/// `1 / R_0,ii`; returns the largest coefficient discrepancy.
pub fn diagonal_wls_reduction(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, t_len, d) = (r.random_range(2..7usize), r.random_range(6..30usize), r.random_range(1..3usize));
    let nt = n * t_len;
    let u = correlated_series(&mut r, n, t_len, 0.3, 0.8);
    // heteroskedastic scales
    let u: Mat = u.iter().enumerate().map(|(i, row)| row.iter().map(|v| v * (0.5 + i as f64)).collect()).collect();
    let c_bar = diagonalizing_constant(&u, 0);
    let m = c_bar * r.random_range(1.0..3.0);
    let cfg = TuningConfig {
        lag: 0,
        threshold_constant: m,
        kernel: Kernel::Bartlett,
        mode: ThresholdMode::LagWise,
    };
    let est = estimate_omega(&to_dmatrix(&u), &cfg).expect("omega");

    let x: Mat = (0..nt).map(|_| (0..d).map(|_| gauss(&mut r)).collect()).collect();
    let y: Vec<f64> = (0..nt).map(|k| 2.0 * x[k][0] + gauss(&mut r)).collect();
    let res = gls(&model(&x, &y, n, t_len), &est.factor, EstimatorKind::Fgls).expect("gls");

    let mut sxx = zeros(d, d);
    let mut sxy = zeros(d, 1);
    for t in 0..t_len {
        for i in 0..n {
            let w = 1.0 / autocov(&u, 0, i, i);
            let row = &x[t * n + i];
            for a in 0..d {
                sxy[a][0] += w * row[a] * y[t * n + i];
                for b in 0..d {
                    sxx[a][b] += w * row[a] * row[b];
                }
            }
        }
    }
    let l = cholesky(&sxx).expect("sxx");
    let wls = chol_solve(&l, &sxy);
    (0..d).map(|k| (res.beta[k] - wls[k][0]).abs()).fold(0.0, f64::max)
}

/// Single-unit covariance path against the Bartlett-weighted Toeplitz
/// autocovariance matrix; returns the largest entry discrepancy.
pub fn newey_west_reduction(seed: u64) -> f64 {
    let mut r = rng(seed);
    let t_len = r.random_range(5..80usize);
    let lag = r.random_range(0..5usize).min(t_len - 2);
    let u = correlated_series(&mut r, 1, t_len, 0.5, 0.0);
    let mut gamma = vec![0.0; lag + 1];
    for (h, g) in gamma.iter_mut().enumerate() {
        *g = (h..t_len).map(|t| u[0][t] * u[0][t - h]).sum::<f64>() / t_len as f64;
    }
    let cfg = TuningConfig {
        lag,
        threshold_constant: r.random_range(0.0..3.0),
        kernel: Kernel::Bartlett,
        mode: ThresholdMode::LagWise,
    };
    let est = estimate_omega(&to_dmatrix(&u), &cfg).expect("omega");
    let lib = est.matrix.to_dense();
    let mut err = 0.0f64;
    for t in 0..t_len {
        for s in 0..t_len {
            let h = t.abs_diff(s);
            let nw = if h > lag { 0.0 } else { (1.0 - h as f64 / (lag + 1) as f64) * gamma[h] };
            err = err.max((lib[(t, s)] - nw).abs());
        }
    }
    err
}
