use smaq::sim::Mode;

use crate::manifest::{self, PageManifest};
use crate::metrics::MetricsRecord;
use crate::runner::{run_bulk, run_migration_time, run_webperf};
use crate::scenario::{standard_scenarios, Experiment, ScenarioConfig};
use crate::Error;

/// Every orbit x loss x mode scenario of `experiment`, sharing the
/// repetitions, seed and checkpoints of `template`. Migration time has no
/// quic side, so it covers the four smaq-pep scenarios. Webperf runs every
/// page in `pages` (all built-in pages when empty).
pub fn campaign_scenarios(experiment: Experiment, template: &ScenarioConfig) -> Vec<ScenarioConfig> {
    standard_scenarios(experiment)
        .into_iter()
        .filter(|s| experiment != Experiment::MigrationTime || s.mode == Mode::SmaqPep)
        .map(|mut s| {
            s.repetitions = template.repetitions;
            s.seed = template.seed;
            s.checkpoints = template.checkpoints.clone();
            s.topology = template.topology.clone();
            s
        })
        .collect()
}

pub fn run_campaign(
    experiment: Experiment,
    template: &ScenarioConfig,
    pages: &[PageManifest],
) -> Result<Vec<MetricsRecord>, Error> {
    let pages = if pages.is_empty() { manifest::builtin() } else { pages.to_vec() };
    let mut out = Vec::new();
    for s in campaign_scenarios(experiment, template) {
        match experiment {
            Experiment::MigrationTime => out.push(run_migration_time(&s)?),
            Experiment::Bulk => out.push(run_bulk(&s)?),
            Experiment::Webperf => {
                for page in &pages {
                    let mut s = s.clone();
                    s.manifest = Some(page.name.clone());
                    out.push(run_webperf(&s, page)?);
                }
            }
        }
    }
    Ok(out)
}
