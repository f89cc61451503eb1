//! Command-line harness: weight generation, property verification, latency
//! sweeps and CTC decoding on top of the `dcstream` library.

pub mod cli;
pub mod config;
pub mod data;
pub mod decode;
pub mod sweep;
pub mod verify;

pub use cli::run;
