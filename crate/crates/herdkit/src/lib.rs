//! File formats, training runs, sweeps and the command line around
//! `herdkit-core`.

pub mod checkpoint;
pub mod cifar;
pub mod cli;
pub mod config_io;
pub mod error;
pub mod logs;
pub mod plots;
pub mod run;
pub mod sweep;

pub use error::{HerdError, Result};
