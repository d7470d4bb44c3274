//! Web page manifests: which hostnames a page contacts and how much each
//! connection carries.
//!
//! Only `google` carries measured figures (4 connections of 170 KB each).
//! Every other built-in manifest is a placeholder with plausible, made-up
//! values; see [`PageManifest::placeholder`].

use std::fmt;
use std::path::Path;

use crate::scenario::ConfigError;

/// One hostname: a fresh connection carrying `resources` responses that
/// split `bytes` evenly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostEntry {
    pub hostname: String,
    pub resources: u32,
    pub bytes: u64,
}

impl HostEntry {
    pub fn new(hostname: impl Into<String>, resources: u32, bytes: u64) -> Self {
        Self { hostname: hostname.into(), resources, bytes }
    }

    /// Response sizes; the first `bytes % resources` get one extra octet.
    pub fn resource_sizes(&self) -> Vec<u64> {
        let n = u64::from(self.resources.max(1));
        let (base, extra) = (self.bytes / n, self.bytes % n);
        (0..n).map(|i| base + u64::from(i < extra)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageManifest {
    pub name: String,
    pub hosts: Vec<HostEntry>,
    /// True when the numbers are invented rather than measured.
    pub placeholder: bool,
}

impl PageManifest {
    pub fn new(name: impl Into<String>, hosts: Vec<HostEntry>) -> Result<Self, ConfigError> {
        let m = Self { name: name.into(), hosts, placeholder: false };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hosts.is_empty() {
            return Err(ConfigError::Manifest(format!("{}: no connections", self.name)));
        }
        if let Some(h) = self.hosts.iter().find(|h| h.resources == 0) {
            return Err(ConfigError::Manifest(format!("{}: {} has no resources", self.name, h.hostname)));
        }
        if self.total_bytes() == 0 {
            return Err(ConfigError::Manifest(format!("{}: zero total bytes", self.name)));
        }
        Ok(())
    }

    pub fn connections(&self) -> usize {
        self.hosts.len()
    }

    pub fn total_bytes(&self) -> u64 {
        self.hosts.iter().map(|h| h.bytes).sum()
    }

    pub fn bytes_per_connection(&self) -> f64 {
        self.total_bytes() as f64 / self.connections() as f64
    }

    /// Resource sizes per connection, as the simulator's page workload wants them.
    pub fn workload(&self) -> Vec<Vec<u64>> {
        self.hosts.iter().map(HostEntry::resource_sizes).collect()
    }

    /// `name = ...` once, then one `host = <hostname> <resources> <bytes>`
    /// line per connection. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut name = None;
        let mut hosts = Vec::new();
        for (key, value, line) in crate::scenario::key_values(text)? {
            match key {
                "name" => name = Some(value.to_string()),
                "host" => {
                    let f: Vec<&str> = value.split_whitespace().collect();
                    let [host, res, bytes] = f[..] else {
                        return Err(ConfigError::Syntax { line, message: "expected `host = <name> <resources> <bytes>`".into() });
                    };
                    let bad = |what: &str| ConfigError::Syntax { line, message: format!("invalid {what}") };
                    hosts.push(HostEntry::new(
                        host,
                        res.parse().map_err(|_| bad("resource count"))?,
                        bytes.parse().map_err(|_| bad("byte count"))?,
                    ));
                }
                other => return Err(ConfigError::UnknownKey { line, key: other.to_string() }),
            }
        }
        Self::new(name.ok_or_else(|| ConfigError::Manifest("missing `name`".into()))?, hosts)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    /// A built-in manifest by name, or a manifest file.
    pub fn resolve(spec: &str) -> Result<Self, ConfigError> {
        builtin().into_iter().find(|m| m.name == spec).map_or_else(|| Self::load(Path::new(spec)), Ok)
    }
}

impl fmt::Display for PageManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        for h in &self.hosts {
            writeln!(f, "host = {} {} {}", h.hostname, h.resources, h.bytes)?;
        }
        Ok(())
    }
}

/// (page, connections, KB per connection, resources per connection)
const PLACEHOLDERS: [(&str, usize, u64, u32); 9] = [
    ("wikipedia", 3, 95, 6),
    ("linkedin", 6, 110, 7),
    ("twitter", 5, 125, 6),
    ("microsoft", 8, 140, 8),
    ("facebook", 7, 185, 9),
    ("apple", 9, 205, 10),
    ("instagram", 4, 225, 9),
    ("amazon", 10, 250, 12),
    ("youtube", 6, 280, 11),
];

/// The ten built-in pages, ascending by bytes per connection.
pub fn builtin() -> Vec<PageManifest> {
    let mut pages: Vec<PageManifest> = PLACEHOLDERS
        .iter()
        .map(|&(name, conns, kb, res)| PageManifest {
            name: name.to_string(),
            hosts: (0..conns).map(|i| HostEntry::new(format!("h{i}.{name}.example"), res, kb * 1000)).collect(),
            placeholder: true,
        })
        .collect();
    pages.push(google());
    pages.sort_by(|a, b| a.bytes_per_connection().total_cmp(&b.bytes_per_connection()));
    pages
}

/// Four hostnames of 170 KB each.
pub fn google() -> PageManifest {
    let hosts = ["www", "fonts", "apis", "ssl"]
        .iter()
        .map(|h| HostEntry::new(format!("{h}.google.example"), 5, 170_000))
        .collect();
    PageManifest { name: "google".into(), hosts, placeholder: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_split_preserves_total() {
        let h = HostEntry::new("a", 3, 10);
        assert_eq!(h.resource_sizes(), vec![4, 3, 3]);
        assert_eq!(HostEntry::new("b", 4, 170_000).resource_sizes(), vec![42_500; 4]);
    }

    #[test]
    fn builtin_set() {
        let pages = builtin();
        assert_eq!(pages.len(), 10);
        assert_eq!(pages.iter().filter(|p| !p.placeholder).count(), 1);
        let g = pages.iter().find(|p| p.name == "google").unwrap();
        assert_eq!(g.connections(), 4);
        assert_eq!(g.bytes_per_connection(), 170_000.0);
        assert!(pages.windows(2).all(|w| w[0].bytes_per_connection() <= w[1].bytes_per_connection()));
        for p in &pages {
            p.validate().unwrap();
        }
    }

    #[test]
    fn parse_round_trips() {
        let g = google();
        let mut back = PageManifest::parse(&g.to_string()).unwrap();
        back.placeholder = g.placeholder;
        assert_eq!(back, g);
    }

    #[test]
    fn parse_rejects_empty_and_malformed() {
        assert!(matches!(PageManifest::parse("name = x\n"), Err(ConfigError::Manifest(_))));
        assert!(matches!(PageManifest::parse("name = x\nhost = a 1 0\n"), Err(ConfigError::Manifest(_))));
        assert!(matches!(PageManifest::parse("name = x\nhost = a 1\n"), Err(ConfigError::Syntax { line: 2, .. })));
    }
}
