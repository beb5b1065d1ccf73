//! Text, CSV and JSON renderings of estimation, tuning and simulation
//! results.

use std::fmt::Write;

use pfgls_core::covariance::{Kernel, ThresholdMode};
use pfgls_core::estimators::TuningProvenance;
use pfgls_core::monte_carlo::McExperimentReport;
use pfgls_core::normal::two_sided_p;
use pfgls_core::panel::{OlsSeKind, TransformStep};
use pfgls_core::{EstimationResult, EstimatorKind};
use serde_json::{json, Value};

/// Significance level of the table asterisks.
pub const STAR_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

pub fn kernel_name(k: Kernel) -> &'static str {
    match k {
        Kernel::Bartlett => "bartlett",
        Kernel::Truncated => "truncated",
    }
}

pub fn mode_name(m: ThresholdMode) -> &'static str {
    match m {
        ThresholdMode::LagWise => "lag_wise",
        ThresholdMode::Universal => "universal",
    }
}

pub fn estimator_label(k: EstimatorKind) -> &'static str {
    match k {
        EstimatorKind::Ols(OlsSeKind::Iid) => "OLS (iid)",
        EstimatorKind::Ols(OlsSeKind::White) => "OLS (White)",
        EstimatorKind::Ols(OlsSeKind::ClusterByUnit) => "OLS (cluster)",
        EstimatorKind::FglsDiag => "FGLS(Diag)",
        EstimatorKind::Fgls => "FGLS",
        EstimatorKind::GlsOracle => "Oracle GLS",
    }
}

pub fn estimator_key(k: EstimatorKind) -> &'static str {
    match k {
        EstimatorKind::Ols(OlsSeKind::Iid) => "ols_iid",
        EstimatorKind::Ols(OlsSeKind::White) => "ols_white",
        EstimatorKind::Ols(OlsSeKind::ClusterByUnit) => "ols_cluster",
        EstimatorKind::FglsDiag => "fgls_diag",
        EstimatorKind::Fgls => "fgls",
        EstimatorKind::GlsOracle => "oracle",
    }
}

fn star(p: f64) -> &'static str {
    if p < STAR_LEVEL {
        "*"
    } else {
        ""
    }
}

fn p_value(beta: f64, se: f64) -> f64 {
    if se > 0.0 {
        two_sided_p(beta / se)
    } else {
        f64::NAN
    }
}

/// Everything `estimate` reports.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub variables: Vec<String>,
    pub n_units: usize,
    pub n_periods: usize,
    pub transform_log: Vec<TransformStep>,
    /// The same OLS coefficients with iid, White and unit-clustered errors.
    pub ols: [EstimationResult; 3],
    pub fgls: EstimationResult,
}

fn tuning_json(t: &TuningProvenance) -> Value {
    json!({
        "L": t.config.lag,
        "L_from_rule": t.lag_from_rule,
        "small_sample": t.small_sample,
        "M_star": t.config.threshold_constant,
        "M_cross_validated": t.bounds.is_some(),
        "c": t.bounds.map(|b| b.c),
        "C_bar": t.bounds.map(|b| b.c_bar),
        "folds": t.folds,
        "gamma_T": t.gamma_t,
        "kernel": kernel_name(t.config.kernel),
        "threshold_mode": mode_name(t.config.mode),
        "m_N_hat": t.diagnostics.m_n_hat,
        "survivor_fraction": t.diagnostics.survivor_fraction,
    })
}

fn tuning_text(out: &mut String, t: &TuningProvenance) {
    let lag_src = if t.lag_from_rule { "rule of thumb" } else { "fixed" };
    let _ = writeln!(out, "bandwidth L = {} ({lag_src}), kernel {}, {} thresholding", t.config.lag, kernel_name(t.config.kernel), mode_name(t.config.mode).replace('_', "-"));
    if t.lag_from_rule && t.small_sample {
        let _ = writeln!(out, "note: T < 100; a bandwidth of at most 3 is advisable for short panels");
    }
    match t.bounds {
        Some(b) => {
            let _ = writeln!(
                out,
                "threshold M* = {:.4} (cross-validated over {} folds; c = {:.4}, C_bar = {:.4})",
                t.config.threshold_constant,
                t.folds.unwrap_or(0),
                b.c,
                b.c_bar
            );
        }
        None => {
            let _ = writeln!(out, "threshold M = {:.4} (fixed)", t.config.threshold_constant);
        }
    }
    let fractions: Vec<String> = t.diagnostics.survivor_fraction.iter().map(|f| format!("{f:.3}")).collect();
    let _ = writeln!(
        out,
        "gamma_T = {:.5}, m_N_hat = {}, off-diagonal survivors by lag: [{}]",
        t.gamma_t,
        t.diagnostics.m_n_hat,
        fractions.join(", ")
    );
}

pub fn render_estimate(r: &EstimateReport, format: Format) -> String {
    let d = r.variables.len();
    match format {
        Format::Text => {
            let mut out = String::new();
            let steps: Vec<String> = r.transform_log.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "balanced panel: N = {}, T = {}, regressors = {}", r.n_units, r.n_periods, d);
            let _ = writeln!(out, "design: {}", if steps.is_empty() { "none".into() } else { steps.join("; ") });
            if let Some(t) = &r.fgls.tuning {
                tuning_text(&mut out, t);
            }
            out.push('\n');
            let _ = writeln!(
                out,
                "{:<14} {:>11} {:>11} {:>11} {:>11} | {:>11} {:>10} {:>8} {:>8}",
                "variable", "OLS", "se(iid)", "se(White)", "se(cluster)", "FGLS", "se", "t", "p"
            );
            for k in 0..d {
                let b = r.ols[0].beta[k];
                let cell = |res: &EstimationResult| {
                    let se = res.se[k];
                    format!("{se:.4}{}", star(p_value(b, se)))
                };
                let f = &r.fgls;
                let p = p_value(f.beta[k], f.se[k]);
                let _ = writeln!(
                    out,
                    "{:<14} {:>11.4} {:>11} {:>11} {:>11} | {:>11} {:>10.4} {:>8.3} {:>8.4}",
                    r.variables[k],
                    b,
                    cell(&r.ols[0]),
                    cell(&r.ols[1]),
                    cell(&r.ols[2]),
                    format!("{:.4}{}", f.beta[k], star(p)),
                    f.se[k],
                    f.t_stats[k],
                    p
                );
            }
            let _ = writeln!(out, "* significant at the 5% level (two-sided normal test)");
            out
        }
        Format::Csv => {
            let mut out = String::from("variable,estimator,estimate,se,t,p,significant_5pct\n");
            for k in 0..d {
                for res in r.ols.iter().chain(std::iter::once(&r.fgls)) {
                    let p = p_value(res.beta[k], res.se[k]);
                    let _ = writeln!(
                        out,
                        "{},{},{:?},{:?},{:?},{:?},{}",
                        r.variables[k],
                        estimator_key(res.kind),
                        res.beta[k],
                        res.se[k],
                        res.t_stats[k],
                        p,
                        p < STAR_LEVEL
                    );
                }
            }
            out
        }
        Format::Json => {
            let f = &r.fgls;
            let p: Vec<f64> = (0..d).map(|k| p_value(f.beta[k], f.se[k])).collect();
            let vcov: Vec<Vec<f64>> = (0..d).map(|a| (0..d).map(|b| f.vcov[(a, b)]).collect()).collect();
            let v = json!({
                "command": "estimate",
                "n_units": r.n_units,
                "n_periods": r.n_periods,
                "variables": r.variables,
                "transform_log": r.transform_log.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "ols": {
                    "beta": r.ols[0].beta.as_slice(),
                    "se_iid": r.ols[0].se.as_slice(),
                    "se_white": r.ols[1].se.as_slice(),
                    "se_cluster": r.ols[2].se.as_slice(),
                },
                "fgls": {
                    "beta": f.beta.as_slice(),
                    "se": f.se.as_slice(),
                    "t": f.t_stats.as_slice(),
                    "p": p,
                    "vcov": vcov,
                },
                "tuning": f.tuning.as_ref().map(tuning_json),
            });
            let mut s = serde_json::to_string_pretty(&v).expect("json");
            s.push('\n');
            s
        }
    }
}

pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("M,objective\n");
    for (m, v) in curve {
        let _ = writeln!(out, "{m:?},{v:?}");
    }
    out
}

pub fn render_tune(t: &TuningProvenance, format: Format) -> String {
    match format {
        Format::Text => {
            let mut out = String::new();
            tuning_text(&mut out, t);
            out.push('\n');
            let _ = writeln!(out, "{:>14} {:>16}", "M", "cv objective");
            for (m, v) in &t.cv_curve {
                let mark = if *m == t.config.threshold_constant { "  <- M*" } else { "" };
                let _ = writeln!(out, "{m:>14.6} {v:>16.8e}{mark}");
            }
            out
        }
        Format::Csv => curve_csv(&t.cv_curve),
        Format::Json => {
            let mut v = tuning_json(t);
            v["command"] = json!("tune");
            v["curve"] = json!(t.cv_curve.iter().map(|(m, o)| [*m, *o]).collect::<Vec<_>>());
            let mut s = serde_json::to_string_pretty(&v).expect("json");
            s.push('\n');
            s
        }
    }
}

pub fn render_simulation(r: &McExperimentReport, format: Format) -> String {
    let c = &r.spec.dgp;
    let tuning_m = match r.spec.tuning.threshold_constant {
        Some(m) => format!("{m}"),
        None => "cv".to_string(),
    };
    let tuning_l = match r.spec.tuning.lag {
        Some(l) => l.to_string(),
        None => "rule".to_string(),
    };
    match format {
        Format::Text => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "N = {}, T = {}, G = {}, gamma = {}, m = {:.4}, rho_max = {}, beta0 = {}, seed = {}, L = {tuning_l}, M = {tuning_m}",
                c.n_units, c.n_periods, c.clusters, c.gamma, c.hetero_max, c.rho_max, c.beta0, c.seed
            );
            let _ = writeln!(
                out,
                "replications: {} requested, {} used, {} skipped; structure {}",
                r.spec.reps,
                r.reps_used,
                r.skipped.len(),
                if c.redraw_structure { "redrawn per replication" } else { "fixed" }
            );
            out.push('\n');
            let _ = writeln!(
                out,
                "{:<14} {:>9} {:>9} {:>7} | {:>9} {:>9} {:>9}",
                "estimator", "mean(b)", "std(b)", "RMSE", "mean(se)", "std(se)", "reject"
            );
            for row in &r.rows {
                let _ = writeln!(
                    out,
                    "{:<14} {:>9.4} {:>9.4} {:>7.3} | {:>9.4} {:>9.4} {:>9.3}",
                    estimator_label(row.kind),
                    row.mean_beta,
                    row.std_beta,
                    row.rmse_ratio,
                    row.mean_se,
                    row.std_se,
                    row.rejection_rate
                );
            }
            let _ = writeln!(
                out,
                "RMSE: mean squared error relative to OLS; reject: rate of {}% tests of beta = beta0",
                r.spec.level * 100.0
            );
            if let Some(m) = r.mean_threshold_constant {
                let _ = writeln!(out, "mean cross-validated M* = {m:.4}");
            }
            for s in &r.skipped {
                let _ = writeln!(out, "skipped replication {}: {}", s.rep, s.reason);
            }
            out
        }
        Format::Csv => {
            let mut out = String::from("estimator,mean_beta,std_beta,rmse_ratio,mean_se,std_se,rejection_rate\n");
            for row in &r.rows {
                let _ = writeln!(
                    out,
                    "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                    estimator_key(row.kind),
                    row.mean_beta,
                    row.std_beta,
                    row.rmse_ratio,
                    row.mean_se,
                    row.std_se,
                    row.rejection_rate
                );
            }
            out
        }
        Format::Json => {
            let rows: Vec<Value> = r
                .rows
                .iter()
                .map(|row| {
                    json!({
                        "estimator": estimator_key(row.kind),
                        "mean_beta": row.mean_beta,
                        "std_beta": row.std_beta,
                        "rmse_ratio": row.rmse_ratio,
                        "mean_se": row.mean_se,
                        "std_se": row.std_se,
                        "rejection_rate": row.rejection_rate,
                    })
                })
                .collect();
            let v = json!({
                "command": "simulate",
                "config": {
                    "N": c.n_units,
                    "T": c.n_periods,
                    "G": c.clusters,
                    "gamma": c.gamma,
                    "m": c.hetero_max,
                    "rho_max": c.rho_max,
                    "beta0": c.beta0,
                    "fe_var": c.fe_var,
                    "error_noise_var": c.error_noise_var,
                    "x_noise_var": c.x_noise_var,
                    "seed": c.seed,
                    "redraw_structure": c.redraw_structure,
                    "L": r.spec.tuning.lag,
                    "M": r.spec.tuning.threshold_constant,
                    "kernel": kernel_name(r.spec.tuning.kernel),
                    "threshold_mode": mode_name(r.spec.tuning.mode),
                    "level": r.spec.level,
                },
                "reps": r.spec.reps,
                "reps_used": r.reps_used,
                "skipped": r.skipped.iter().map(|s| json!({"rep": s.rep, "reason": s.reason})).collect::<Vec<_>>(),
                "rows": rows,
                "mean_M_star": r.mean_threshold_constant,
            });
            let mut s = serde_json::to_string_pretty(&v).expect("json");
            s.push('\n');
            s
        }
    }
}
