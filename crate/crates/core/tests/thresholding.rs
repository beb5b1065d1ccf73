mod oracle;

use pfgls_core::covariance::{
    bartlett_weights, default_bandwidth, estimate_omega, lag_autocov, soft_threshold, soft_threshold_blocks,
    threshold_rate, Kernel, ThresholdMode, TuningConfig,
};
use pfgls_core::panel::{ols, StackedModel};
use pfgls_core::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn formula_cases() {
    assert_eq!(soft_threshold(0.5, 0.2), 0.3);
    assert_eq!(soft_threshold(-0.5, 0.2), -0.3);
    assert_eq!(soft_threshold(0.1, 0.2), 0.0);
    assert_eq!(soft_threshold(-0.2, 0.2), 0.0);
    assert_eq!(bartlett_weights(3), vec![1.0, 0.75, 0.5, 0.25]);
    assert_eq!(default_bandwidth(100).lag, 4);
    assert!((threshold_rate(3, 50, 100) - (150f64.ln() / 100.0).sqrt()).abs() < 1e-15);
}

#[test]
fn lag_blocks_of_constant_series() {
    let u = DMatrix::from_element(1, 4, 1.0);
    let r = lag_autocov(&u, 1).unwrap();
    assert_eq!(r[0][(0, 0)], 1.0);
    assert_eq!(r[1][(0, 0)], 0.75);
}

#[test]
fn ar1_autocovariances_follow_geometric_decay() {
    // u_t = rho u_{t-1} + e_t, var e = 1: gamma_h = rho^h / (1 - rho^2)
    let rho = 0.6;
    let t_len = 200_000;
    let mut r = oracle::rng(7);
    let mut prev = 0.0;
    let mut u = DMatrix::zeros(1, t_len);
    for t in 0..t_len {
        prev = rho * prev + oracle::gauss(&mut r);
        u[(0, t)] = prev;
    }
    let blocks = lag_autocov(&u, 3).unwrap();
    for (h, b) in blocks.iter().enumerate() {
        let expect = rho.powi(h as i32) / (1.0 - rho * rho);
        assert!((b[(0, 0)] - expect).abs() < 0.03, "lag {h}: {} vs {expect}", b[(0, 0)]);
    }
}

#[test]
fn universal_mode_keeps_pairs_with_a_strong_lag() {
    // pair (0,1) is weak at lag 0 but strong at lag 1
    let r0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.01, 0.01, 1.0]);
    let r1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.02, 0.5]);
    let raw = [r0, r1];
    let lw = soft_threshold_blocks(&raw, 1.0, ThresholdMode::LagWise, 25).unwrap();
    let un = soft_threshold_blocks(&raw, 1.0, ThresholdMode::Universal, 25).unwrap();
    let tau = lw.tau[(0, 1)];
    assert!(tau > 0.02 && tau < 0.4);
    assert_eq!(lw.thresholded[1][(0, 1)], 0.4 - tau);
    assert_eq!(un.thresholded[1][(0, 1)], 0.4 - tau);
    assert_eq!(un.thresholded[0][(0, 1)], 0.0);
    // diagonals untouched at every lag
    assert_eq!(lw.thresholded[1][(0, 0)], 0.5);

    let weak = [
        DMatrix::from_row_slice(2, 2, &[1.0, 0.01, 0.01, 1.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.02, 0.02, 0.5]),
    ];
    let un = soft_threshold_blocks(&weak, 1.0, ThresholdMode::Universal, 25).unwrap();
    assert!(un.thresholded.iter().all(|b| b[(0, 1)] == 0.0 && b[(1, 0)] == 0.0));
}

fn residuals(seed: u64, n: usize, t_len: usize) -> DMatrix<f64> {
    let mut r = oracle::rng(seed);
    let u = oracle::correlated_series(&mut r, n, t_len, 0.4, 0.7);
    DMatrix::from_fn(n, t_len, |i, t| u[i][t])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shrinks_toward_zero_without_sign_flips(z in -1e3f64..1e3, tau in 0.0f64..10.0) {
        let s = soft_threshold(z, tau);
        prop_assert!(s.abs() <= z.abs());
        prop_assert!(s == 0.0 || s.signum() == z.signum());
        prop_assert!((z - s).abs() <= tau + 1e-12);
        prop_assert_eq!(soft_threshold(-z, tau), -s);
    }

    #[test]
    fn entries_shrink_monotonically_in_the_constant(seed in 0u64..1000, m1 in 0.0f64..3.0, dm in 0.0f64..3.0) {
        let u = residuals(seed, 5, 30);
        let raw = lag_autocov(&u, 2).unwrap();
        let a = soft_threshold_blocks(&raw, m1, ThresholdMode::LagWise, 30).unwrap();
        let b = soft_threshold_blocks(&raw, m1 + dm, ThresholdMode::LagWise, 30).unwrap();
        for (x, y) in a.thresholded.iter().zip(&b.thresholded) {
            for (p, q) in x.iter().zip(y.iter()) {
                prop_assert!(q.abs() <= p.abs());
            }
        }
    }

    #[test]
    fn estimate_is_scale_equivariant(seed in 0u64..1000, scale in 0.01f64..100.0, m in 0.0f64..2.0) {
        // tau scales with the variances, so Omega(c u) = c^2 Omega(u)
        let u = residuals(seed, 4, 40);
        let cfg = TuningConfig { lag: 2, threshold_constant: m, kernel: Kernel::Bartlett, mode: ThresholdMode::LagWise };
        let (Ok(a), Ok(b)) = (estimate_omega(&u, &cfg), estimate_omega(&(&u * scale), &cfg)) else {
            return Ok(());
        };
        for (p, q) in a.lags.thresholded.iter().zip(&b.lags.thresholded) {
            let diff = (p * (scale * scale) - q).amax();
            prop_assert!(diff <= 1e-12 * scale * scale * p.amax().max(1.0));
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_regressors(seed in 0u64..1000) {
        let mut r = oracle::rng(seed);
        let (n, t_len, d) = (4, 12, 3);
        let x = DMatrix::from_fn(n * t_len, d, |_, _| oracle::gauss(&mut r));
        let y = DVector::from_fn(n * t_len, |_, _| oracle::gauss(&mut r));
        let model = StackedModel { y, x: x.clone(), n_units: n, n_periods: t_len, transform_log: Vec::new() };
        let fit = ols(&model).unwrap();
        prop_assert!((x.transpose() * &fit.residuals).amax() < 1e-10);
    }
}
