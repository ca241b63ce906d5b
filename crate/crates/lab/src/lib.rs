//! Config files, parallel cell execution and report files for the D2D-CE
//! experiments. The `d2dce` binary is a thin wrapper over this crate.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{resolve, ConfigFile, Experiment, Resolved};
pub use error::{LabError, Result};
