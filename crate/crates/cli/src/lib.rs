//! Command-line front end: CSV ingestion, configuration and report writing
//! around the `ivattrit` estimators.

pub mod config;
pub mod io;
pub mod report;
pub mod run;

pub use config::{parse_args, ArgsError, ColumnMapping, Command, RunConfig};
pub use io::{load_csv, read_csv, write_atomic, write_simulated, LoadError};
pub use run::{error_report, run, write_error, RunOutput};
