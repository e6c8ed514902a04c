//! File formats and the command-line pipeline around `neurosleep-core`:
//! EDF/EDF+ input, the NSE1 epoch store, NSC1 checkpoints, TOML run
//! configuration, and report, history and hypnogram writers.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod edf;
pub mod error;
pub mod hypnogram;
mod io;
pub mod report;
pub mod store;

pub use error::{Error, Result};
pub use io::write_file;
