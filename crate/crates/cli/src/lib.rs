//! Command-line driver for the AFC memory simulator: scenario files,
//! pipelines and the experimental timeline.

pub mod error;
pub mod run;
pub mod scenario;
pub mod timeline;

pub use error::CliError;
pub use run::{Artifacts, Format};
pub use scenario::Scenario;
