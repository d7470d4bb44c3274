//! Scenario descriptions and the key-value configuration format.
//!
//! A configuration file holds one `key = value` pair per line; blank lines
//! and text after `#` are ignored. Keys mirror [`ScenarioConfig`]:
//!
//! ```text
//! experiment  = bulk            # migration-time | bulk | webperf
//! orbit       = geo             # geo | leo
//! loss        = 0.001           # probability in [0, 1]
//! mode        = smaq-pep        # quic | smaq-pep
//! pep_count   = 2               # 0..=2, must be 0 for quic
//! repetitions = 10
//! seed        = 1
//! checkpoints = 10, 20, 30      # bulk only, seconds
//! manifest    = google          # webperf only, built-in name or file path
//! ```

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smaq::netem::{Orbit, Topology};
use smaq::sim::{Mode, SimConfig, Workload};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("plain QUIC runs without middleboxes, got pep_count {0}")]
    QuicWithPeps(u8),
    #[error("pep_count {0} exceeds the two PEP positions")]
    TooManyPeps(u8),
    #[error("loss {0} outside [0, 1]")]
    InvalidLoss(f64),
    #[error("{0} needs mode smaq-pep with at least one PEP")]
    NeedsHandover(Experiment),
    #[error("no checkpoints configured")]
    NoCheckpoints,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    MigrationTime,
    Bulk,
    Webperf,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::MigrationTime => "migration-time",
            Experiment::Bulk => "bulk",
            Experiment::Webperf => "webperf",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "migration-time" => Ok(Experiment::MigrationTime),
            "bulk" => Ok(Experiment::Bulk),
            "webperf" => Ok(Experiment::Webperf),
            other => Err(format!("unknown experiment {other:?}")),
        }
    }
}

pub const DEFAULT_CHECKPOINTS: [Duration; 3] =
    [Duration::from_secs(10), Duration::from_secs(20), Duration::from_secs(30)];

/// One measurement scenario: a point in orbit x loss x mode, repeated.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub orbit: Orbit,
    pub loss: f64,
    pub mode: Mode,
    pub pep_count: u8,
    pub repetitions: u32,
    pub seed: u64,
    /// Bulk sampling times, ascending.
    pub checkpoints: Vec<Duration>,
    /// Webperf page: built-in name or manifest path.
    pub manifest: Option<String>,
    /// Replaces the standard satellite chain.
    pub topology: Option<Topology>,
}

impl ScenarioConfig {
    pub fn new(experiment: Experiment, orbit: Orbit, loss: f64, mode: Mode) -> Self {
        Self {
            experiment,
            orbit,
            loss,
            mode,
            pep_count: if mode == Mode::SmaqPep { 2 } else { 0 },
            repetitions: 10,
            seed: 1,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            manifest: None,
            topology: None,
        }
    }

    pub fn with_repetitions(mut self, n: u32) -> Self {
        self.repetitions = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repetitions == 0 {
            return Err(ConfigError::NoRepetitions);
        }
        if self.mode == Mode::Quic && self.pep_count != 0 {
            return Err(ConfigError::QuicWithPeps(self.pep_count));
        }
        if self.pep_count > 2 {
            return Err(ConfigError::TooManyPeps(self.pep_count));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(ConfigError::InvalidLoss(self.loss));
        }
        match self.experiment {
            Experiment::MigrationTime if self.mode != Mode::SmaqPep || self.pep_count == 0 => {
                Err(ConfigError::NeedsHandover(self.experiment))
            }
            Experiment::Bulk if self.checkpoints.is_empty() => Err(ConfigError::NoCheckpoints),
            _ => Ok(()),
        }
    }

    /// Stable identifier, e.g. `bulk-geo-0.1pct-smaq-pep`.
    pub fn name(&self) -> String {
        let pct = format!("{}", self.loss * 100.0);
        let mut name = format!("{}-{}-{}pct-{}", self.experiment, self.orbit, pct, self.mode);
        if self.mode == Mode::SmaqPep && self.pep_count != 2 {
            name.push_str(&format!("-{}pep", self.pep_count));
        }
        if let Some(m) = &self.manifest {
            let stem = std::path::Path::new(m).file_stem().and_then(|s| s.to_str()).unwrap_or(m);
            name.push('-');
            name.push_str(stem);
        }
        name
    }

    /// Seed of repetition `run`; independent of the repetition count.
    pub fn run_seed(&self, run: u32) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(run));
        rng.gen()
    }

    /// Simulator configuration for one repetition.
    pub fn sim_config(&self, run: u32, workload: Workload) -> SimConfig {
        let mut c = SimConfig::new(self.orbit, self.loss, self.mode, self.run_seed(run), workload);
        c.pep_count = self.pep_count;
        c.topology = self.topology.clone();
        if self.experiment == Experiment::Bulk {
            c.duration = self.checkpoints.iter().copied().max().unwrap_or(Duration::ZERO);
        } else {
            c.duration = Duration::from_secs(120);
        }
        c
    }

    /// Applies a configuration file on top of `self`.
    pub fn apply_file(mut self, text: &str) -> Result<Self, ConfigError> {
        for (key, value, line) in key_values(text)? {
            let bad = |what: &str| ConfigError::Syntax { line, message: format!("invalid {what} `{value}`") };
            match key {
                "experiment" => self.experiment = value.parse().map_err(|_| bad("experiment"))?,
                "orbit" => self.orbit = value.parse().map_err(|_| bad("orbit"))?,
                "loss" => self.loss = value.parse().map_err(|_| bad("loss"))?,
                "mode" => {
                    self.mode = value.parse().map_err(|_| bad("mode"))?;
                    self.pep_count = if self.mode == Mode::SmaqPep { 2 } else { 0 };
                }
                "pep_count" => self.pep_count = value.parse().map_err(|_| bad("pep_count"))?,
                "repetitions" => self.repetitions = value.parse().map_err(|_| bad("repetitions"))?,
                "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
                "checkpoints" => self.checkpoints = parse_checkpoints(value).map_err(|_| bad("checkpoints"))?,
                "manifest" => self.manifest = Some(value.to_string()),
                other => return Err(ConfigError::UnknownKey { line, key: other.to_string() }),
            }
        }
        Ok(self)
    }

    /// The file form of `self` (without any topology override).
    pub fn to_file(&self) -> String {
        let cps: Vec<String> = self.checkpoints.iter().map(|d| format!("{}", d.as_secs_f64())).collect();
        let mut out = format!(
            "experiment = {}\norbit = {}\nloss = {}\nmode = {}\npep_count = {}\nrepetitions = {}\nseed = {}\ncheckpoints = {}\n",
            self.experiment,
            self.orbit,
            self.loss,
            self.mode,
            self.pep_count,
            self.repetitions,
            self.seed,
            cps.join(", ")
        );
        if let Some(m) = &self.manifest {
            out.push_str(&format!("manifest = {m}\n"));
        }
        out
    }
}

/// Comma- or space-separated seconds.
pub fn parse_checkpoints(s: &str) -> Result<Vec<Duration>, String> {
    let mut out = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let secs: f64 = t.parse().map_err(|_| format!("invalid checkpoint {t:?}"))?;
            Duration::try_from_secs_f64(secs).map_err(|_| format!("invalid checkpoint {t:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// `(key, value, line number)` for every non-blank line.
pub(crate) fn key_values(text: &str) -> Result<Vec<(&str, &str, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: "expected `key = value`".into() })?;
        out.push((k.trim(), v.trim(), i + 1));
    }
    Ok(out)
}

/// The eight orbit x loss x mode combinations.
pub fn standard_scenarios(experiment: Experiment) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for orbit in Orbit::ALL {
        for loss in STANDARD_LOSSES {
            for mode in Mode::ALL {
                out.push(ScenarioConfig::new(experiment, orbit, loss, mode));
            }
        }
    }
    out
}

/// 0.01 % and 0.1 %.
pub const STANDARD_LOSSES: [f64; 2] = [0.0001, 0.001];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants() {
        let ok = ScenarioConfig::new(Experiment::Bulk, Orbit::Geo, 0.001, Mode::Quic);
        assert_eq!(ok.validate(), Ok(()));
        assert_eq!(ok.clone().with_repetitions(0).validate(), Err(ConfigError::NoRepetitions));
        let mut bad = ok.clone();
        bad.pep_count = 2;
        assert_eq!(bad.validate(), Err(ConfigError::QuicWithPeps(2)));
        let mut lossy = ok.clone();
        lossy.loss = 1.5;
        assert_eq!(lossy.validate(), Err(ConfigError::InvalidLoss(1.5)));
        let mt = ScenarioConfig::new(Experiment::MigrationTime, Orbit::Geo, 0.0, Mode::Quic);
        assert!(matches!(mt.validate(), Err(ConfigError::NeedsHandover(_))));
    }

    #[test]
    fn names_are_distinct() {
        let names: std::collections::BTreeSet<String> =
            standard_scenarios(Experiment::Bulk).iter().map(ScenarioConfig::name).collect();
        assert_eq!(names.len(), 8);
        assert!(names.contains("bulk-geo-0.1pct-smaq-pep"));
        assert!(names.contains("bulk-leo-0.01pct-quic"));
    }

    #[test]
    fn run_seeds_are_stable_and_distinct() {
        let c = ScenarioConfig::new(Experiment::Bulk, Orbit::Leo, 0.0, Mode::Quic);
        let a: Vec<u64> = (0..5).map(|r| c.run_seed(r)).collect();
        let b: Vec<u64> = (0..5).map(|r| c.clone().with_repetitions(50).run_seed(r)).collect();
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<std::collections::BTreeSet<_>>().len(), 5);
    }

    #[test]
    fn file_round_trip() {
        let mut c = ScenarioConfig::new(Experiment::Webperf, Orbit::Leo, 0.0001, Mode::SmaqPep);
        c.manifest = Some("google".into());
        c.checkpoints = vec![Duration::from_millis(500), Duration::from_secs(2)];
        let base = ScenarioConfig::new(Experiment::Bulk, Orbit::Geo, 0.5, Mode::Quic);
        assert_eq!(base.apply_file(&c.to_file()).unwrap(), c);
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let base = ScenarioConfig::new(Experiment::Bulk, Orbit::Geo, 0.0, Mode::Quic);
        let err = base.clone().apply_file("# comment\norbit = mars\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");
        let err = base.clone().apply_file("colour = blue").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { line: 1, key: "colour".into() });
        assert!(base.apply_file("orbit geo").is_err());
    }

    #[test]
    fn checkpoints_parse() {
        assert_eq!(
            parse_checkpoints("30, 10 20").unwrap(),
            DEFAULT_CHECKPOINTS.to_vec()
        );
        assert!(parse_checkpoints("ten").is_err());
    }
}
