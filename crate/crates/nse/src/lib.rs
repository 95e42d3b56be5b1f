//! File formats, the parallel edit driver, benchmarks and the verification
//! suite for [`nse_core`].

pub mod bench;
pub mod engine;
pub mod error;
pub mod manifest;
pub mod npy;
pub mod verify;

pub use error::{CliError, Result};

/// Crate version, recorded in reports.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
