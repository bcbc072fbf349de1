//! Configuration, file formats and the `xvenue` command line on top of
//! [`xvenue_core`].

pub mod cache;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::CliError;
