//! File formats, configuration, dataset directories and the command-line
//! front end around `voxinv-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod model;
pub mod report;
pub mod volume;

pub use error::{Error, Result};
