//! Replications spread over a bounded rayon pool.

use pfgls_core::monte_carlo::{fixed_structure, run_replication, summarize, ExperimentSpec, McExperimentReport};
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Runs every replication on `threads` workers (`0` = one per core).
///
/// Each replication draws from its own RNG stream and outcomes are
/// collected in replication order before aggregation, so the report does
/// not depend on the thread count.
pub fn run_experiment_parallel(spec: &ExperimentSpec, threads: usize) -> Result<McExperimentReport> {
    spec.dgp.validate()?;
    if spec.reps == 0 {
        return Err(CliError::Config("at least one replication is required".into()));
    }
    let shared = if spec.dgp.redraw_structure { None } else { Some(fixed_structure(&spec.dgp)?) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
    let outcomes = pool.install(|| {
        (0..spec.reps)
            .into_par_iter()
            .map(|rep| run_replication(spec, rep, shared.as_ref()))
            .collect::<Vec<_>>()
    });
    let log: Vec<String> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(rep, o)| o.as_ref().err().map(|e| format!("replication {rep}: {e}")))
        .collect();
    match summarize(spec, outcomes) {
        Err(source @ pfgls_core::Error::SkipRateExceeded { .. }) => Err(CliError::SkipRate { source, log }),
        other => Ok(other?),
    }
}
