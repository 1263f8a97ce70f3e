//! Command-line surface: config ingestion, experiment dispatch, structure
//! reports, and CSV emission.

pub mod commands;
pub mod config;
pub mod csv_out;
pub mod manifest;
