//! File formats, the remote policy backend, and the `bacm` command line on
//! top of `bacm-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod remote;

pub use config::RunConfig;
pub use error::AppError;
