//! Dataset ingestion, run configuration files and report serialization.

pub mod config;
pub mod dataset;
pub mod report;

pub use config::ConfigFile;
pub use dataset::{load_dataset_csv, Roles};
pub use report::{emit_report, format_number, lengths_path, render_report, OutputFormat, Report};
