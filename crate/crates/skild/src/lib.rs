//! File formats, configuration, manifests and the command line for
//! [`skild_core`].
//!
//! Tensors travel as SKFT containers ([`tensor`]), human-edited settings as
//! JSON ([`config`]), tables as CSV. Every command writes a manifest with
//! the command line, seed, schedule, spectrum provenance and artifact list
//! ([`manifest`]).

mod cli;
mod commands;
pub mod config;
mod error;
pub mod manifest;
pub mod tensor;

pub use cli::{run, VERSION};
pub use commands::SIGN_THRESHOLD;
pub use error::{Error, Result};
