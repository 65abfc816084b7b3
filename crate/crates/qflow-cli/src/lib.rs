//! Library surface of the command-line tool, split out so integration
//! tests can exercise configs, checkpoints, and commands directly.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod tasks;
