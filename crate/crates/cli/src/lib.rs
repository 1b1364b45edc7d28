//! Command-line front end and JSON-over-HTTP service for `softseg`.

mod commands;
pub mod server;

pub use commands::{run, Cli, Command};
