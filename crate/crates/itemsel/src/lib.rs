//! File formats, annotation client, reports and the `itemsel` command line
//! on top of `itemsel-core`.

pub mod annotator;
pub mod cli;
pub mod error;
pub mod formats;
pub mod report;
pub mod run;

pub use error::{CliError, CliResult, ExitKind};
