//! Field files, run configurations and batch pipelines on top of
//! [`hjbreach_core`].
//!
//! * [`format`]: the `RCHF` binary field/mask format and its TOML sidecar.
//! * [`config`]: TOML run configurations and their resolution.
//! * [`pipeline`]: solve, extract, verify and oracle-compare stages writing
//!   into a per-configuration run directory with a manifest.
//! * [`export`]: CSV and JSON writers.

pub mod config;
pub mod error;
pub mod export;
pub mod format;
pub mod pipeline;

pub use config::{Resolved, RunConfig};
pub use error::{ConfigError, FormatError, RunError};
pub use format::{load, load_field, save_field, save_mask, FieldFile};
pub use pipeline::{run, Pipeline};
