//! Experiment harness for comparing executor backends: plans, instrumented
//! runs, comparison reports and the `taskbench` command line.

pub mod cli;
pub mod plan;
pub mod report;
pub mod run;

pub use cli::{run_cli, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
