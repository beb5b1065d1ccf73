//! Small dense helpers shared by the estimators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Condition-number ceiling for the `d × d` cross-product matrices we invert.
pub const CONDITION_LIMIT: f64 = 1e12;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a small symmetric positive definite matrix, refusing
/// anything whose condition number reaches [`CONDITION_LIMIT`].
pub fn spd_inverse_checked(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = g.clone().symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < CONDITION_LIMIT) || !lo.is_finite() {
        return Err(Error::Singular {
            min_singular_value: libm::sqrt(lo.max(0.0)),
            condition,
        });
    }
    let chol = g.clone().cholesky().ok_or(Error::Singular {
        min_singular_value: libm::sqrt(lo.max(0.0)),
        condition,
    })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}
