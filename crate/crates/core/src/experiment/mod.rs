//! Config-driven, resumable experiment runs.
//!
//! A run lives in `<root>/<config-hash>/` with `trajectories/`, `datasets/`,
//! `models/`, `reports/` and `plots/` below it, next to `config.toml` and
//! `manifest.toml`. Each stage records itself in the manifest when it
//! finishes and is skipped on later invocations unless forced.

mod config;
mod manifest;
mod plot;
mod stages;

pub use config::{
    DatasetSection, ExperimentConfig, FilterSection, GridItem, ReportSection, SurrogateSource,
    SystemSection,
};
pub use manifest::{RunManifest, StageRecord};
pub use plot::{line_chart, Series};
pub use stages::{
    mae_table, resolve_output_root, Run, Stage, StageOutcome, TrainTarget, DEFAULT_OUTPUT_ROOT,
    OUTPUT_ROOT_ENV,
};
