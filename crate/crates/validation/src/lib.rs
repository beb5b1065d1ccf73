//! Bookkeeping for the acceptance run: one verdict line per criterion and
//! an overall exit status.

use std::process::ExitCode;
use std::time::Instant;

#[derive(Debug, Default)]
pub struct Ledger {
    failed: Vec<u32>,
    total: usize,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prints `[PASS]`/`[FAIL]` with the criterion number, a short name, the
    /// observed values, and the elapsed time of `started`.
    pub fn record(&mut self, id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
        self.total += 1;
        if !pass {
            self.failed.push(id);
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {id} {name}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
    }

    pub fn finish(self) -> ExitCode {
        println!(
            "acceptance: {} of {} criteria passed{}",
            self.total - self.failed.len(),
            self.total,
            if self.failed.is_empty() { String::new() } else { format!("; failed: {:?}", self.failed) }
        );
        if self.failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}

/// Closed interval membership.
pub fn within(x: f64, lo: f64, hi: f64) -> bool {
    lo <= x && x <= hi
}
