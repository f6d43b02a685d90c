//! Library surface of the `sinkperm` command-line tool.
//!
//! The binary in `main.rs` is a thin argument-parsing layer over these
//! modules; integration tests drive the same code paths in-process.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod util;
