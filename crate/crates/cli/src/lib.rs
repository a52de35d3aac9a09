// Guards written as `!(x > 0.0)` intentionally reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Library surface of the experiment runner: configuration, persistence,
//! execution, and plot emission. The `distinv` binary is a thin argument
//! parser over these modules.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod plot;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use experiment::{run_batch, run_experiment, RunManifest, Verdict};
