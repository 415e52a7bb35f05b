//! File formats, the staged experiment pipeline and the command-line front
//! end around `ircoco-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod jsonl;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
