//! Scenario runner, verification suites and file formats behind the `kdvf` binary.

pub mod commands;
pub mod output;
pub mod run;
pub mod scenario;
pub mod suites;

pub use run::{run_scenario, RunOutcome, Status};
