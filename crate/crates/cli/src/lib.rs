//! Command-line front end: config ingestion, orchestration and result files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod commands;
pub mod config;

pub use app::{AppError, Outputs};
pub use config::RunConfig;
