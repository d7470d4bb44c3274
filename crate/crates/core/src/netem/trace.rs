use std::fmt::Write as _;
use std::io;
use std::time::Duration;

/// Append-only event log, one line per event:
///
/// ```text
/// <time_ns> <node> <event> <details>
/// ```
///
/// Packet events use `tx`, `fwd`, `rx` and `drop` with a datagram summary as
/// details; protocol events use their own names with the addresses involved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    enabled: bool,
    lines: Vec<String>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Self { enabled, lines: Vec::new() }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(&mut self, now: Duration, node: &str, event: &str, details: impl std::fmt::Display) {
        if !self.enabled {
            return;
        }
        let mut line = String::with_capacity(64);
        let _ = write!(line, "{} {} {} {}", now.as_nanos(), node, event, details);
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Lines whose event field equals `event`.
    pub fn events<'a>(&'a self, event: &'a str) -> impl Iterator<Item = TraceLine<'a>> + 'a {
        self.lines.iter().filter_map(|l| TraceLine::parse(l)).filter(move |l| l.event == event)
    }

    pub fn write_to(&self, mut out: impl io::Write) -> io::Result<()> {
        for l in &self.lines {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }
}

/// A parsed trace line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceLine<'a> {
    pub time: Duration,
    pub node: &'a str,
    pub event: &'a str,
    pub details: &'a str,
}

impl<'a> TraceLine<'a> {
    pub fn parse(line: &'a str) -> Option<Self> {
        let mut parts = line.splitn(4, ' ');
        let time = Duration::from_nanos(parts.next()?.parse().ok()?);
        let node = parts.next()?;
        let event = parts.next()?;
        Some(Self { time, node, event, details: parts.next().unwrap_or("") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip() {
        let mut t = Trace::new(true);
        t.record(Duration::from_micros(1500), "pep1", "migrated", "0:1 -> 1:4433");
        assert_eq!(t.lines()[0], "1500000 pep1 migrated 0:1 -> 1:4433");
        let l = t.events("migrated").next().unwrap();
        assert_eq!(l.time, Duration::from_micros(1500));
        assert_eq!(l.details, "0:1 -> 1:4433");
    }

    #[test]
    fn disabled_trace_records_nothing() {
        let mut t = Trace::new(false);
        t.record(Duration::ZERO, "client", "tx", "x");
        assert!(t.is_empty());
    }
}
