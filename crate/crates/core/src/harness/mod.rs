//! Batch experiments: configuration, replicate execution, CSV output and
//! cross-seed aggregation.

pub mod aggregate;
pub mod config;
pub mod run;

pub use aggregate::{aggregate, read_tracks, write_aggregate, AggregateRow, AggregateTable};
pub use config::ExperimentConfig;
pub use run::{run, run_all, run_replicate, write_records, ReplicateResult, CPI_FILE, TRACKS_FILE};
