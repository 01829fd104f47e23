//! Command-line orchestration for `delaytherm`: configuration files, parameter
//! sweeps, figure tables, SVG rendering and theory/simulation comparison.

pub mod app;
pub mod compare;
pub mod config;
pub mod error;
pub mod figures;
pub mod svg;
pub mod sweep;
pub mod table;

pub use app::{run, Command, Outcome, RunConfig};
pub use error::{CliError, CliResult};
pub use sweep::{Source, SweepRow};
