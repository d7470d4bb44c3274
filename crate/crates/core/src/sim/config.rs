use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::congestion::CongestionConfig;
use crate::handover::Capabilities;
use crate::net::{DatagramKind, FrameKinds, NodeId};
use crate::netem::{Orbit, Topology, CLIENT_PEP1_DELAY, DOWNLINK_RATE, PEP2_SERVER_DELAY};
use crate::transport::ConnectionConfig;

/// Multiplicative decrease of the simulated QUIC stacks' Reno sender.
pub const ENDPOINT_LOSS_REDUCTION: f64 = 0.7;

/// Time a middlebox spends rebuilding keys and connection state from an
/// offer before its facades start probing.
pub const RESTORE_DELAY: Duration = Duration::from_micros(100);

/// Window cap of the satellite legs in bandwidth-delay products. Halving a
/// capped window on a random loss still leaves the pipe full while the
/// bandwidth estimate is catching up.
pub const SATELLITE_CAP_FACTOR: u64 = 4;

/// NewReno as shipped by common QUIC stacks: initial window of ten
/// datagrams, backoff to 0.7 of the window on loss.
pub fn endpoint_reno() -> CongestionConfig {
    CongestionConfig { loss_reduction_factor: ENDPOINT_LOSS_REDUCTION, ..CongestionConfig::new_reno() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Plain end-to-end QUIC.
    Quic,
    /// SMAQ negotiation with XADS and middlebox handover.
    SmaqPep,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Quic, Mode::SmaqPep];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Quic => "quic",
            Mode::SmaqPep => "smaq-pep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mode {0:?}, expected quic or smaq-pep")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quic" => Ok(Mode::Quic),
            "smaq-pep" | "smaq" => Ok(Mode::SmaqPep),
            other => Err(UnknownMode(other.to_string())),
        }
    }
}

/// What the client asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Workload {
    /// Connection setup and handover only.
    Handshake,
    /// One connection; the server streams random data until the run ends.
    Bulk,
    /// One connection per hostname, all opened at time zero, one
    /// request/response stream per resource. Entries are resource sizes.
    Page(Vec<Vec<u64>>),
}

/// Discards matching datagrams when they are emitted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DropRule {
    pub from_node: Option<NodeId>,
    pub to_node: Option<NodeId>,
    pub kind: Option<DatagramKind>,
    /// Every listed frame type must be present.
    pub frames: FrameKinds,
    /// Only the first `limit` matches are dropped.
    pub limit: Option<u32>,
}

impl DropRule {
    pub fn matches(&self, src: NodeId, dst: NodeId, kind: DatagramKind, frames: FrameKinds) -> bool {
        self.from_node.is_none_or(|n| n == src)
            && self.to_node.is_none_or(|n| n == dst)
            && self.kind.is_none_or(|k| k == kind)
            && frames.contains(self.frames)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Faults {
    pub drops: Vec<DropRule>,
    /// Overrides what PEP1 and PEP2 can restore.
    pub capabilities: [Option<Capabilities>; 2],
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub orbit: Orbit,
    pub loss: f64,
    pub mode: Mode,
    /// Middleboxes on the path (0 to 2). Only meaningful for `SmaqPep`.
    pub pep_count: u8,
    pub seed: u64,
    /// Bits per second on every server-to-client hop; 0 disables the limit.
    pub downlink_rate: u64,
    pub workload: Workload,
    /// The run stops here at the latest.
    pub duration: Duration,
    /// Replaces the standard satellite chain (same four nodes).
    pub topology: Option<Topology>,
    pub faults: Faults,
    /// Record every datagram in the trace, not only protocol events.
    pub trace_packets: bool,
    /// Keep middlebox-emitted payloads and held data for inspection.
    pub audit: bool,
    /// Keep every plaintext octet the client application receives.
    pub capture: bool,
}

impl SimConfig {
    pub fn new(orbit: Orbit, loss: f64, mode: Mode, seed: u64, workload: Workload) -> Self {
        Self {
            orbit,
            loss,
            mode,
            pep_count: if mode == Mode::SmaqPep { 2 } else { 0 },
            seed,
            downlink_rate: DOWNLINK_RATE,
            workload,
            duration: Duration::from_secs(30),
            topology: None,
            faults: Faults::default(),
            trace_packets: false,
            audit: false,
            capture: false,
        }
    }

    pub fn handover_enabled(&self) -> bool {
        self.mode == Mode::SmaqPep && self.pep_count > 0
    }

    /// Round trip of the satellite hop alone.
    pub fn satellite_rtt(&self) -> Duration {
        2 * self.orbit.satellite_delay()
    }

    pub fn endpoint_config(&self) -> ConnectionConfig {
        ConnectionConfig { smaq: self.mode == Mode::SmaqPep, congestion: endpoint_reno(), ..ConnectionConfig::default() }
    }

    /// Facade towards the client: a sub-millisecond leg, probed at a fixed rate.
    pub fn client_leg_config(&self) -> ConnectionConfig {
        let congestion = CongestionConfig {
            initial_rtt: 2 * CLIENT_PEP1_DELAY + Duration::from_micros(200),
            disable_backoff_until_migration: true,
            ..endpoint_reno()
        };
        ConnectionConfig { smaq: true, congestion, ..ConnectionConfig::default() }
    }

    /// Facades on either end of the satellite hop.
    pub fn satellite_leg_config(&self, rtt: Duration) -> ConnectionConfig {
        let congestion = CongestionConfig {
            initial_rtt: rtt,
            disable_backoff_until_migration: true,
            ..CongestionConfig::hybla_westwood().with_bdp_cap_factor(self.downlink_rate, rtt, SATELLITE_CAP_FACTOR)
        };
        ConnectionConfig { smaq: true, congestion, ..ConnectionConfig::default() }
    }

    /// PEP2's facade towards the server: terrestrial, standard NewReno.
    pub fn server_leg_config(&self) -> ConnectionConfig {
        let congestion = CongestionConfig {
            initial_rtt: 2 * PEP2_SERVER_DELAY,
            disable_backoff_until_migration: true,
            ..endpoint_reno()
        };
        ConnectionConfig { smaq: true, congestion, ..ConnectionConfig::default() }
    }

    pub fn build_topology(&self) -> Result<Topology, crate::netem::NetemError> {
        match &self.topology {
            Some(t) => Ok(t.clone()),
            None => Topology::satellite(self.orbit, self.loss, self.downlink_rate),
        }
    }
}
