use std::time::Duration;

use crate::scenario::ScenarioConfig;
use crate::stats::Summary;

/// Values of one metric across the successful repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub metric: String,
    /// `(repetition, value)` in repetition order.
    pub values: Vec<(u32, f64)>,
    /// `None` when no repetition succeeded.
    pub summary: Option<Summary<f64>>,
}

impl Series {
    pub fn new(metric: impl Into<String>, values: Vec<(u32, f64)>) -> Self {
        let xs: Vec<f64> = values.iter().map(|&(_, v)| v).collect();
        Self { metric: metric.into(), summary: Summary::of(&xs), values }
    }

    pub fn samples(&self) -> Vec<f64> {
        self.values.iter().map(|&(_, v)| v).collect()
    }

    pub fn median(&self) -> Option<f64> {
        self.summary.map(|s| s.median)
    }

    pub fn std_dev(&self) -> Option<f64> {
        self.summary.map(|s| s.std_dev)
    }
}

/// Results of one scenario: per-run values and their median and standard
/// deviation for every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub series: Vec<Series>,
    /// Repetitions excluded from every series.
    pub failed_runs: Vec<u32>,
}

impl MetricsRecord {
    pub fn failures(&self) -> usize {
        self.failed_runs.len()
    }

    pub fn series(&self, metric: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.metric == metric)
    }

    pub fn median(&self, metric: &str) -> Option<f64> {
        self.series(metric)?.median()
    }

    pub fn std_dev(&self, metric: &str) -> Option<f64> {
        self.series(metric)?.std_dev()
    }
}

/// Migration time in milliseconds.
pub const MIGRATION_TIME: &str = "migration_time_ms";
/// Approximated page load time in milliseconds.
pub const APLT: &str = "aplt_ms";

/// `bytes@10s`, `bytes@0.5s`, ...
pub fn bytes_at(t: Duration) -> String {
    format!("bytes@{}s", t.as_secs_f64())
}
