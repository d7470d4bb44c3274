//! `smaq-bench`: run migration-time, bulk and webperf measurements.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smaq::netem::Orbit;
use smaq::sim::Mode;
use smaq_experiments::scenario::parse_checkpoints;
use smaq_experiments::{
    emit_outputs, manifest, run_bulk, run_campaign, run_migration_time, run_webperf, Error, Experiment,
    MetricsRecord, PageManifest, ScenarioConfig,
};

/// Parsed as one comma-separated value, not a repeated flag.
type Checkpoints = Vec<std::time::Duration>;

#[derive(Parser)]
#[command(name = "smaq-bench", version, about = "Distributed-PEP satellite measurements on the simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time from handover state creation until the client migrates.
    MigrationTime(Common),
    /// Bytes received at checkpoints during an unbounded download.
    Bulk {
        #[command(flatten)]
        common: Common,
        /// Checkpoints in seconds, comma separated.
        #[arg(long, value_parser = parse_checkpoints)]
        checkpoints: Option<Checkpoints>,
    },
    /// Approximated page load time of one page.
    Webperf {
        #[command(flatten)]
        common: Common,
        /// Built-in page name or manifest file; default google.
        #[arg(long)]
        manifest: Option<String>,
    },
    /// All orbit x loss x mode scenarios of one experiment, with plots.
    Campaign {
        #[arg(value_parser = clap::value_parser!(Experiment))]
        experiment: Experiment,
        #[arg(long, short)]
        repetitions: Option<u32>,
        #[arg(long, short)]
        seed: Option<u64>,
        #[arg(long, short, default_value = "results")]
        out_dir: PathBuf,
        /// Bulk checkpoints in seconds.
        #[arg(long, value_parser = parse_checkpoints)]
        checkpoints: Option<Checkpoints>,
        /// Webperf pages (built-in names or files); default all built-in pages.
        #[arg(long = "manifest")]
        manifests: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value scenario file; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    orbit: Option<Orbit>,
    /// Loss probability on the satellite hop, e.g. 0.001 for 0.1 %.
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    pep_count: Option<u8>,
    #[arg(long, short)]
    repetitions: Option<u32>,
    #[arg(long, short)]
    seed: Option<u64>,
    #[arg(long, short, default_value = "results")]
    out_dir: PathBuf,
}

impl Common {
    fn scenario(&self, experiment: Experiment) -> Result<ScenarioConfig, Error> {
        let mode = if experiment == Experiment::MigrationTime { Mode::SmaqPep } else { Mode::Quic };
        let mut s = ScenarioConfig::new(experiment, Orbit::Geo, 0.0001, mode);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
            s = s.apply_file(&text)?;
            s.experiment = experiment;
        }
        if let Some(o) = self.orbit {
            s.orbit = o;
        }
        if let Some(l) = self.loss {
            s.loss = l;
        }
        if let Some(m) = self.mode {
            s.mode = m;
            s.pep_count = if m == Mode::SmaqPep { 2 } else { 0 };
        }
        if let Some(p) = self.pep_count {
            s.pep_count = p;
        }
        if let Some(r) = self.repetitions {
            s.repetitions = r;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(s)
    }
}

fn summarize(records: &[MetricsRecord]) {
    for r in records {
        for s in &r.series {
            if let Some(sum) = s.summary {
                println!("{:<44} {:<18} median {:>14.3}  std-dev {:>12.3}  n={}", r.scenario, s.metric, sum.median, sum.std_dev, sum.count);
            }
        }
        if r.failures() > 0 {
            println!("{:<44} {} failed run(s) excluded", r.scenario, r.failures());
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (records, out_dir) = match cli.command {
        Command::MigrationTime(c) => (vec![run_migration_time(&c.scenario(Experiment::MigrationTime)?)?], c.out_dir),
        Command::Bulk { common, checkpoints } => {
            let mut s = common.scenario(Experiment::Bulk)?;
            if let Some(cp) = checkpoints {
                s.checkpoints = cp;
            }
            (vec![run_bulk(&s)?], common.out_dir)
        }
        Command::Webperf { common, manifest } => {
            let mut s = common.scenario(Experiment::Webperf)?;
            let page = PageManifest::resolve(manifest.as_deref().or(s.manifest.as_deref()).unwrap_or("google"))?;
            s.manifest = Some(page.name.clone());
            (vec![run_webperf(&s, &page)?], common.out_dir)
        }
        Command::Campaign { experiment, repetitions, seed, out_dir, checkpoints, manifests } => {
            let mut t = ScenarioConfig::new(experiment, Orbit::Geo, 0.0, Mode::SmaqPep);
            if experiment == Experiment::MigrationTime {
                t.repetitions = 100;
            }
            t.repetitions = repetitions.unwrap_or(t.repetitions);
            t.seed = seed.unwrap_or(t.seed);
            if let Some(cp) = checkpoints {
                t.checkpoints = cp;
            }
            let pages = manifests.iter().map(|m| PageManifest::resolve(m)).collect::<Result<Vec<_>, _>>()?;
            let pages = if pages.is_empty() { manifest::builtin() } else { pages };
            (run_campaign(experiment, &t, &pages)?, out_dir)
        }
    };
    summarize(&records);
    for path in emit_outputs(&records, &out_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smaq-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
