//! File formats, configuration, a thread-pool executor and the `unitfix`
//! command line on top of `unitfix-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;

pub use error::{Error, Result};
