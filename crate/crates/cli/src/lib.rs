//! Pipeline plumbing behind the `safesite` binary: run configuration,
//! dataset manifests, provenance records, the stages themselves, and map
//! rendering.

pub mod config;
pub mod error;
pub mod layout;
pub mod manifest;
pub mod pipeline;
pub mod provenance;
pub mod render;

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
pub use manifest::DatasetManifest;
pub use pipeline::Run;
