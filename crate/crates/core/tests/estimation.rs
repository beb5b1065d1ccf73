mod oracle;

use oracle::checks::to_dmatrix;
use pfgls_core::covariance::{estimate_omega, Kernel, ThresholdMode, TuningConfig};
use pfgls_core::estimators::{gls_oracle, wald_test, DenseCovariance, TuningRequest};
use pfgls_core::panel::StackedModel;
use pfgls_core::{fgls_pipeline, DMatrix, DVector, DesignSpec, Error, PanelData, Stage};

#[test]
fn small_estimate_matches_hand_assembly() {
    // N = 3, T = 8, L = 1, M = 0.5
    let u = [
        [1.0, -0.5, 0.3, 2.0, -1.2, 0.7, 0.1, -0.4],
        [0.8, -0.2, 0.5, 1.5, -0.9, 0.2, -0.3, -0.6],
        [-0.3, 1.1, -0.8, 0.2, 0.6, -1.0, 0.9, 0.4],
    ];
    let (n, t_len, m) = (3, 8, 0.5);
    let res = DMatrix::from_fn(n, t_len, |i, t| u[i][t]);
    let r = |h: usize, i: usize, j: usize| (h..t_len).map(|t| u[i][t] * u[j][t - h]).sum::<f64>() / 8.0;
    let gamma = (3f64.ln() / 8.0).sqrt();
    let tau = |i: usize, j: usize| m * gamma * (r(0, i, i) * r(0, j, j)).sqrt();
    let s = |z: f64, t: f64| if z.abs() > t { z.signum() * (z.abs() - t) } else { 0.0 };
    let blk = |h: usize, i: usize, j: usize| if i == j { r(h, i, i) } else { s(r(h, i, j), tau(i, j)) };

    let cfg = TuningConfig { lag: 1, threshold_constant: m, kernel: Kernel::Bartlett, mode: ThresholdMode::LagWise };
    let est = estimate_omega(&res, &cfg).unwrap();
    let dense = est.matrix.to_dense();
    for t in 0..t_len {
        for s_ in 0..t_len {
            for i in 0..n {
                for j in 0..n {
                    let expect = match t as i64 - s_ as i64 {
                        0 => blk(0, i, j),
                        1 => 0.5 * blk(1, i, j),
                        -1 => 0.5 * blk(1, j, i),
                        _ => 0.0,
                    };
                    let got = dense[(t * n + i, s_ * n + j)];
                    assert!((got - expect).abs() < 1e-14, "({t},{i}),({s_},{j}): {got} vs {expect}");
                }
            }
        }
    }
    assert!((est.lags.gamma_t - gamma).abs() < 1e-15);
}

#[test]
fn known_ar1_covariance_matches_prais_winsten() {
    // independent units, u_it = rho_i u_i,t-1 + e_it, var e_it = s_i^2
    let (rho, sd) = ([0.5, -0.3, 0.8], [1.0, 2.0, 0.5]);
    let (n, t_len) = (3, 15);
    let mut r = oracle::rng(21);
    let x: Vec<Vec<f64>> = (0..n * t_len).map(|_| vec![oracle::gauss(&mut r), 1.0]).collect();
    let y: Vec<f64> = x.iter().map(|row| 1.5 * row[0] - 0.2 + oracle::gauss(&mut r)).collect();

    let omega = DMatrix::from_fn(n * t_len, n * t_len, |a, b| {
        let (t, i, s, j) = (a / n, a % n, b / n, b % n);
        if i != j {
            return 0.0;
        }
        let p: f64 = rho[i];
        sd[i] * sd[i] * p.powi(t.abs_diff(s) as i32) / (1.0 - p * p)
    });
    let model = StackedModel {
        y: DVector::from_column_slice(&y),
        x: to_dmatrix(&x),
        n_units: n,
        n_periods: t_len,
        transform_log: Vec::new(),
    };
    let res = gls_oracle(&model, &DenseCovariance::new(omega).unwrap()).unwrap();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let p: f64 = rho[i];
        for t in 0..t_len {
            let k = t * n + i;
            if t == 0 {
                let w = (1.0 - p * p).sqrt() / sd[i];
                xs.push(x[k].iter().map(|v| v * w).collect::<Vec<_>>());
                ys.push(y[k] * w);
            } else {
                let km = (t - 1) * n + i;
                xs.push((0..2).map(|c| (x[k][c] - p * x[km][c]) / sd[i]).collect());
                ys.push((y[k] - p * y[km]) / sd[i]);
            }
        }
    }
    let pw = oracle::lstsq(&xs, &ys);
    for c in 0..2 {
        assert!((res.beta[c] - pw[c]).abs() < 1e-10, "{} vs {}", res.beta[c], pw[c]);
    }
}

fn simulated_panel(seed: u64, n: usize, t_len: usize) -> PanelData {
    let mut r = oracle::rng(seed);
    let u = oracle::correlated_series(&mut r, n, t_len, 0.4, 0.6);
    let x = oracle::correlated_series(&mut r, n, t_len, 0.3, 0.3);
    PanelData::from_fn(n, t_len, 1, |i, t| 0.1 * i as f64 + 2.0 * x[i][t] + u[i][t], |i, t, _| x[i][t]).unwrap()
}

#[test]
fn pipeline_reports_tuning_and_recovers_the_slope() {
    let data = simulated_panel(5, 12, 60);
    let out = fgls_pipeline(&data, &DesignSpec::two_way(), &TuningRequest::default()).unwrap();
    let tuning = out.fgls.tuning.as_ref().unwrap();
    assert_eq!(tuning.config.lag, 4); // round(4 (0.6)^(2/9))
    assert!(tuning.lag_from_rule && tuning.small_sample);
    assert!(tuning.bounds.is_some() && tuning.folds == Some(4));
    assert!((out.fgls.beta[0] - 2.0).abs() < 5.0 * out.fgls.se[0]);
    let g = out.fgls.gamma_hat.as_ref().unwrap();
    let id = &out.fgls.vcov * g * (out.model.n_obs() as f64);
    assert!((id - DMatrix::identity(1, 1)).amax() < 1e-10);
    let w = wald_test(&out.fgls, &[2.0], 0.05).unwrap();
    assert!(w[0].p_value > 0.0 && w[0].p_value <= 1.0);
}

#[test]
fn pipeline_errors_carry_their_stage() {
    let data = simulated_panel(6, 4, 6);
    let req = TuningRequest { lag: Some(6), ..TuningRequest::default() };
    let err = fgls_pipeline(&data, &DesignSpec::two_way(), &req).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: Stage::Bandwidth, .. }), "{err}");

    let req = TuningRequest { lag: Some(1), cv: pfgls_core::CvConfig { folds: Some(4), ..Default::default() }, ..TuningRequest::default() };
    let err = fgls_pipeline(&data, &DesignSpec::two_way(), &req).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: Stage::Tuning, .. }), "{err}");
}
