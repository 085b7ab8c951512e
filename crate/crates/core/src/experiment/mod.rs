//! Config-driven experiment runs: single estimates, ground truth and the
//! `(d, n)` table sweep, with their result files.

pub mod config;
pub mod harness;
pub mod output;

pub use config::{DatasetSource, OutputFormat, RunConfig, TableGrid};
pub use harness::{
    run_estimate, run_estimate_with, run_ground_truth, run_ground_truth_with, run_table, run_table_with, Cell,
    CellOutput, ConfiguredTrainer, Quantity, ResultRow, Role, TableRun,
};
