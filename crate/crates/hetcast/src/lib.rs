//! File formats, the run pipeline and the command-line driver around
//! `hetcast-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod log;
pub mod manifest;
pub mod pipeline;
pub mod relfiles;
pub mod report;

pub use error::{Error, Result};
