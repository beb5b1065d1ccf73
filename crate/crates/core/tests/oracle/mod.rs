//! Independent dense reference implementations. Plain `Vec<Vec<f64>>`
//! arithmetic, written from the textbook formulas, with no use of the
//! library's linear algebra.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn transpose(a: &Mat) -> Mat {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for p in 0..k {
            let v = a[i][p];
            for j in 0..m {
                out[i][j] += v * b[p][j];
            }
        }
    }
    out
}

/// Lower Cholesky factor; `None` at the first non-positive pivot.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut l = zeros(n, n);
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        l[j][j] = d.sqrt();
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / l[j][j];
        }
    }
    Some(l)
}

/// Solves `L L' x = b` column by column.
pub fn chol_solve(l: &Mat, b: &Mat) -> Mat {
    let n = l.len();
    let m = b[0].len();
    let mut x = b.clone();
    for c in 0..m {
        for i in 0..n {
            let mut s = x[i][c];
            for k in 0..i {
                s -= l[i][k] * x[k][c];
            }
            x[i][c] = s / l[i][i];
        }
        for i in (0..n).rev() {
            let mut s = x[i][c];
            for k in i + 1..n {
                s -= l[k][i] * x[k][c];
            }
            x[i][c] = s / l[i][i];
        }
    }
    x
}

/// Least squares via Householder QR.
pub fn lstsq(x: &Mat, y: &[f64]) -> Vec<f64> {
    let (n, d) = (x.len(), x[0].len());
    let mut a = x.clone();
    let mut b = y.to_vec();
    for k in 0..d {
        let norm: f64 = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|e| e * e).sum();
        if vv == 0.0 {
            continue;
        }
        for j in k..d {
            let s: f64 = (k..n).map(|i| v[i - k] * a[i][j]).sum::<f64>() * 2.0 / vv;
            for i in k..n {
                a[i][j] -= s * v[i - k];
            }
        }
        let s: f64 = (k..n).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vv;
        for i in k..n {
            b[i] -= s * v[i - k];
        }
    }
    let mut beta = vec![0.0; d];
    for k in (0..d).rev() {
        let mut s = b[k];
        for j in k + 1..d {
            s -= a[k][j] * beta[j];
        }
        beta[k] = s / a[k][k];
    }
    beta
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Largest singular value of a (possibly non-symmetric) square block.
pub fn spectral_norm(a: &Mat) -> f64 {
    let ata = matmul(&transpose(a), a);
    jacobi_eigenvalues(&ata).into_iter().fold(0.0, f64::max).max(0.0).sqrt()
}

/// `u[i][t]`: `T^-1 sum_{t >= h} u_i,t u_j,t-h`.
pub fn autocov(u: &Mat, h: usize, i: usize, j: usize) -> f64 {
    let t_len = u[0].len();
    let mut s = 0.0;
    for t in h..t_len {
        s += u[i][t] * u[j][t - h];
    }
    s / t_len as f64
}

pub fn soft(z: f64, tau: f64) -> f64 {
    if z.abs() <= tau {
        0.0
    } else {
        z.signum() * (z.abs() - tau)
    }
}

pub fn rate(lag: usize, n: usize, t: usize) -> f64 {
    let ln = (lag.max(1) * n) as f64;
    if ln <= 1.0 {
        0.0
    } else {
        (ln.ln() / t as f64).sqrt()
    }
}

/// Entry-by-entry `Omega_hat` in time-major order (row `t N + i`).
pub fn omega_dense(u: &Mat, lag: usize, m: f64, weights: &[f64], universal: bool) -> Mat {
    let (n, t_len) = (u.len(), u[0].len());
    let g = rate(lag, n, t_len);
    let tau = |i: usize, j: usize| m * g * (autocov(u, 0, i, i) * autocov(u, 0, j, j)).sqrt();
    let entry = |h: usize, i: usize, j: usize| {
        let r = autocov(u, h, i, j);
        if i == j {
            return r;
        }
        if universal && (0..=lag).all(|k| autocov(u, k, i, j).abs() <= tau(i, j)) {
            return 0.0;
        }
        soft(r, tau(i, j))
    };
    let mut out = zeros(n * t_len, n * t_len);
    for t in 0..t_len {
        for s in 0..t_len {
            let h = t.abs_diff(s);
            if h > lag {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    // block (t, s) with t >= s is R_h; above the diagonal its transpose
                    let v = if t >= s { entry(h, i, j) } else { entry(h, j, i) };
                    out[t * n + i][s * n + j] = weights[h] * v;
                }
            }
        }
    }
    out
}

/// `(beta, (X' O^-1 X)^-1)` from a dense covariance.
pub fn dense_gls(omega: &Mat, x: &Mat, y: &[f64]) -> Option<(Vec<f64>, Mat)> {
    let l = cholesky(omega)?;
    let d = x[0].len();
    let mut rhs = x.clone();
    for (r, row) in rhs.iter_mut().enumerate() {
        row.push(y[r]);
    }
    let sol = chol_solve(&l, &rhs);
    let xt = transpose(x);
    let g_full = matmul(&xt, &sol);
    let g: Mat = g_full.iter().map(|r| r[..d].to_vec()).collect();
    let b: Mat = g_full.iter().map(|r| vec![r[d]]).collect();
    let lg = cholesky(&g)?;
    let beta = chol_solve(&lg, &b).into_iter().map(|r| r[0]).collect();
    let ident: Mat = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    Some((beta, chol_solve(&lg, &ident)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

/// `N × T` residual-like series: AR(1) in time with a common factor.
pub fn correlated_series<R: Rng>(r: &mut R, n: usize, t_len: usize, rho: f64, load: f64) -> Mat {
    let mut u = zeros(n, t_len);
    let mut prev = vec![0.0; n];
    for t in 0..t_len {
        let f = gauss(r);
        for i in 0..n {
            let e = gauss(r) + load * f;
            prev[i] = rho * prev[i] + e;
            u[i][t] = prev[i];
        }
    }
    u
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub mod checks;
