//! Scenario runner and benchmark for the cognition kernel.
//!
//! Scenarios are JSON files driven on a virtual clock; a run yields a
//! [`report::MetricsReport`] and a verdict for every expectation.

pub mod bench;
pub mod expect;
pub mod report;
pub mod run;
pub mod scenario;

pub use bench::{bench, BenchConfig, BenchReport};
pub use expect::{Expectation, ExpectationResult};
pub use report::MetricsReport;
pub use run::{run, run_with, RunOutcome};
pub use scenario::{LoadError, Resolved, Scenario};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const EXPECTATION_FAILED: i32 = 1;
    pub const LOAD_ERROR: i32 = 2;
}
