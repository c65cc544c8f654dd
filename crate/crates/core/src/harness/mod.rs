//! Configuration and the command implementations behind the `pdy` binary.

mod commands;
mod config;

pub use commands::*;
pub use config::*;
