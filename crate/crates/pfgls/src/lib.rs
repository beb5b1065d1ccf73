//! Command line, file formats and the parallel simulation runner built on
//! [`pfgls_core`].
//!
//! * [`ingest`] reads long-form delimited panel files;
//! * [`report`] renders results as text tables, CSV or JSON;
//! * [`parallel`] runs Monte Carlo replications on a rayon pool with a
//!   report that does not depend on the thread count;
//! * [`config`] and [`cli`] implement the `pfgls` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod parallel;
pub mod report;

pub use error::{CliError, Result};
