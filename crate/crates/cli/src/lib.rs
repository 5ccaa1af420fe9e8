//! Front end for `tatt-core`: study configuration, CSV ingestion, and the
//! `simulate`, `estimate` and `sensitivity` runs with their report files.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod table_io;

pub use config::{ColumnMapping, Mode, StudyConfig};
pub use error::{CliError, Result};
pub use run::{execute, run_command, Manifest, RunOutcome};
pub use table_io::{load_table, write_table, LoadedTable};
