//! Experiment cells, grids with resumable on-disk results, and report
//! aggregation for the synthbias benchmark.

pub mod cell;
pub mod error;
pub mod grid;
pub mod report;

pub use cell::{run_cell, Augmentation, CellOutcome, Protocol, Variant};
pub use error::{HarnessError, Result};
pub use grid::{derive_seed, run_grid, CellConfig, ExperimentGrid, GridSummary, Manifest, ResultRow, RunOptions};
pub use report::{report, report_path, report_reader, Aggregate, OrderingRow, Report, Stat};
