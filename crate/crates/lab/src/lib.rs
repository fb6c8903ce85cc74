//! Experiment runner for `pencil-core`: config files, studies producing CSV
//! tables and JSON reports, named self-checks, and the command-line front end.

pub mod app;
pub mod checks;
pub mod config;
pub mod studies;
