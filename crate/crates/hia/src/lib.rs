//! File formats, the multi-seed experiment harness and the `hia` command line,
//! built on [`hia_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod files;
pub mod gop_io;
pub mod history;
pub mod report;

pub use error::{HiaError, Result};
