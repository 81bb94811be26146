//! Command-line harness around the `beamid` library: run configuration,
//! provenance-tagged artifacts, the generate/train/eval/sweep pipeline and
//! SVG reports.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod provenance;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
