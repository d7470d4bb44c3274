//! The three measurements. Repetitions run in parallel; each owns its
//! simulator and results are gathered in repetition order.

use std::time::Duration;

use rayon::prelude::*;
use smaq::handover::ClientPhase;
use smaq::sim::{self, SimReport, Workload};

use crate::manifest::PageManifest;
use crate::metrics::{bytes_at, MetricsRecord, Series, APLT, MIGRATION_TIME};
use crate::scenario::{Experiment, ScenarioConfig};
use crate::Error;

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Every handover reached the migrated state (trivially true without PEPs).
fn handovers_completed(report: &SimReport) -> bool {
    report
        .connections
        .iter()
        .all(|c| c.handover.as_ref().is_none_or(|h| matches!(h.phase, ClientPhase::Migrated { .. })))
}

/// Runs every repetition and turns each report into per-metric values, or
/// `None` for a failed run.
fn collect<F>(cfg: &ScenarioConfig, workload: Workload, metrics: &[String], measure: F) -> Result<MetricsRecord, Error>
where
    F: Fn(&SimReport) -> Option<Vec<f64>> + Sync,
{
    cfg.validate()?;
    let runs: Vec<Result<Option<Vec<f64>>, Error>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|run| {
            let report = sim::run(cfg.sim_config(run, workload.clone()))?;
            Ok(measure(&report))
        })
        .collect();
    let mut columns: Vec<Vec<(u32, f64)>> = vec![Vec::new(); metrics.len()];
    let mut failed_runs = Vec::new();
    for (run, r) in runs.into_iter().enumerate() {
        let run = run as u32;
        match r? {
            Some(values) => {
                for (col, v) in columns.iter_mut().zip(values) {
                    col.push((run, v));
                }
            }
            None => failed_runs.push(run),
        }
    }
    Ok(MetricsRecord {
        scenario: cfg.name(),
        config: cfg.clone(),
        series: metrics.iter().zip(columns).map(|(m, v)| Series::new(m.clone(), v)).collect(),
        failed_runs,
    })
}

/// Time from the client creating the handover state until it migrates to
/// PEP1. Runs where the handover does not complete are excluded and counted.
pub fn run_migration_time(cfg: &ScenarioConfig) -> Result<MetricsRecord, Error> {
    if cfg.experiment != Experiment::MigrationTime {
        return Err(Error::WrongExperiment { expected: Experiment::MigrationTime, got: cfg.experiment });
    }
    collect(cfg, Workload::Handshake, &[MIGRATION_TIME.to_string()], |r| {
        let h = r.connections.first()?.handover.as_ref()?;
        Some(vec![ms(h.migration_time()?)])
    })
}

/// Application bytes received by each checkpoint during an unbounded download.
pub fn run_bulk(cfg: &ScenarioConfig) -> Result<MetricsRecord, Error> {
    if cfg.experiment != Experiment::Bulk {
        return Err(Error::WrongExperiment { expected: Experiment::Bulk, got: cfg.experiment });
    }
    let names: Vec<String> = cfg.checkpoints.iter().map(|&t| bytes_at(t)).collect();
    collect(cfg, Workload::Bulk, &names, |r| {
        handovers_completed(r).then(|| cfg.checkpoints.iter().map(|&t| r.bytes_at(t) as f64).collect())
    })
}

/// Time until the last byte of the last resource of `manifest`, one
/// connection per hostname, all started together.
pub fn run_webperf(cfg: &ScenarioConfig, manifest: &PageManifest) -> Result<MetricsRecord, Error> {
    if cfg.experiment != Experiment::Webperf {
        return Err(Error::WrongExperiment { expected: Experiment::Webperf, got: cfg.experiment });
    }
    manifest.validate()?;
    let mut cfg = cfg.clone();
    cfg.manifest.get_or_insert_with(|| manifest.name.clone());
    collect(&cfg, Workload::Page(manifest.workload()), &[APLT.to_string()], |r| {
        if !handovers_completed(r) {
            return None;
        }
        Some(vec![ms(r.page_load_time()?)])
    })
}

/// `(median(a) - median(b)) / median(b)` for `metric`.
pub fn relative_difference(a: &MetricsRecord, b: &MetricsRecord, metric: &str) -> Option<f64> {
    let (ma, mb) = (a.median(metric)?, b.median(metric)?);
    (mb != 0.0).then(|| (ma - mb) / mb)
}

/// Times where `a - b` changes sign, linearly interpolated between samples.
/// Stretches where the curves are equal do not count as crossings.
pub fn crossings(times: &[Duration], a: &[f64], b: &[f64]) -> Vec<Duration> {
    let mut out = Vec::new();
    let mut last: Option<(Duration, f64)> = None;
    for ((&t, &x), &y) in times.iter().zip(a).zip(b) {
        let d = x - y;
        if d == 0.0 {
            continue;
        }
        if let Some((t0, d0)) = last {
            if d0.signum() != d.signum() {
                let frac = d0.abs() / (d0.abs() + d.abs());
                out.push(t0 + (t - t0).mul_f64(frac));
            }
        }
        last = Some((t, d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(v: &[f64]) -> Vec<Duration> {
        v.iter().map(|&s| Duration::from_secs_f64(s)).collect()
    }

    #[test]
    fn crossing_interpolates() {
        let t = secs(&[0.0, 1.0, 2.0, 3.0]);
        let quic = [0.0, 10.0, 20.0, 30.0];
        let smaq = [0.0, 0.0, 30.0, 60.0];
        assert_eq!(crossings(&t, &smaq, &quic), secs(&[1.5]));
    }

    #[test]
    fn touching_is_not_crossing() {
        let t = secs(&[0.0, 1.0, 2.0]);
        assert!(crossings(&t, &[1.0, 2.0, 3.0], &[0.0, 2.0, 1.0]).is_empty());
        assert_eq!(crossings(&t, &[1.0, 2.0, 1.0], &[0.0, 2.0, 3.0]).len(), 1);
    }
}
