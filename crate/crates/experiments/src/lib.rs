//! Measurement campaigns over the simulated distributed-PEP satellite path:
//! middlebox migration time, bulk download and approximated page load time,
//! with CSV and SVG output.

pub mod campaign;
pub mod manifest;
pub mod metrics;
pub mod output;
pub mod runner;
pub mod scenario;
pub mod stats;

pub use campaign::{campaign_scenarios, run_campaign};
pub use manifest::{HostEntry, PageManifest};
pub use metrics::{MetricsRecord, Series};
pub use output::emit_outputs;
pub use runner::{crossings, relative_difference, run_bulk, run_migration_time, run_webperf};
pub use scenario::{ConfigError, Experiment, ScenarioConfig};

pub type Summary64 = stats::Summary<f64>;
pub type Summary32 = stats::Summary<f32>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Netem(#[from] smaq::netem::NetemError),
    #[error("{expected} runner given a {got} scenario")]
    WrongExperiment { expected: Experiment, got: Experiment },
    #[error("no records to write")]
    NoRecords,
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("output: {0}")]
    Output(String),
}
