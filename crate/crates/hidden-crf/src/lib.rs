//! File formats, parallel execution and the command-line front end for
//! [`hidden_crf_core`].

pub mod atomic;
pub mod cli;
pub mod config;
pub mod error;
pub mod model_io;
pub mod parallel;
pub mod selfcheck;
pub mod wsconll;

pub use error::{CliError, Result};
pub use hidden_crf_core as core;
