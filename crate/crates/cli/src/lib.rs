//! Config-driven front end for `optsub`: simulation campaigns, probability exports
//! and single estimates on CSV data.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use dataset::{load_csv_dataset, ColumnRef, CsvOptions, LoadedCsv};
pub use error::CliError;
