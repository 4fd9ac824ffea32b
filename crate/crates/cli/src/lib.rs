//! Command-line pipeline and HTTP service over the core library.

pub mod commands;
pub mod jobs;
pub mod service;

pub use commands::{run, Cli};
