//! Scenario loading and subcommands behind the `ltlcbf` binary.

pub mod commands;
pub mod error;
pub mod scenario;

pub use error::{CliError, Result};
pub use scenario::Scenario;
