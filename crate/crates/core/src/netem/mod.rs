//! Deterministic network emulation: directional links with delay, i.i.d. loss
//! and rate limits, a chain topology, an event scheduler and a text trace.

mod link;
mod scheduler;
mod topology;
mod trace;

use std::collections::BTreeMap;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use link::{Link, LinkProfile, LinkStats, Transmit};
pub use scheduler::Scheduler;
pub use topology::*;
pub use trace::{Trace, TraceLine};

use crate::net::NodeId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetemError {
    #[error("loss probability {0} outside [0, 1]")]
    InvalidLoss(f64),
    #[error("unknown orbit {0:?}")]
    UnknownOrbit(String),
    #[error("a chain of {nodes} nodes needs {} hops, got {hops}", nodes.saturating_sub(1))]
    InvalidChain { nodes: usize, hops: usize },
}

/// Live links of a topology, each with an independent loss stream.
#[derive(Debug, Clone)]
pub struct Network {
    topology: Topology,
    links: BTreeMap<(NodeId, NodeId), Link>,
}

impl Network {
    pub fn new(topology: Topology, seed: u64) -> Self {
        let links = topology
            .links()
            .map(|((a, b), p)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((u64::from(a) << 16) | u64::from(b));
                ((a, b), Link::new(*p, rng))
            })
            .collect();
        Self { topology, links }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> Option<&Link> {
        self.links.get(&(from, to))
    }

    /// Sends `bytes` from `at` one hop toward `dst`. Returns the next node
    /// and its arrival time, or `None` when dropped or unroutable.
    pub fn hop(&mut self, now: Duration, at: NodeId, dst: NodeId, bytes: usize) -> Option<(NodeId, Duration)> {
        let next = self.topology.next_hop(at, dst)?;
        match self.links.get_mut(&(at, next))?.transmit(now, bytes) {
            Transmit::Delivered { at: t } => Some((next, t)),
            Transmit::Dropped => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_loss_within_bound() {
        let topo = Topology::satellite(Orbit::Geo, 0.001, 0).unwrap();
        let mut net = Network::new(topo, 42);
        let n = 100_000;
        let dropped = (0..n).filter(|_| net.hop(Duration::ZERO, PEP1, PEP2, 1200).is_none()).count();
        let rate = dropped as f64 / n as f64;
        assert!((rate - 0.001).abs() <= 0.15 * 0.001, "{rate}");
    }

    #[test]
    fn per_link_streams_are_independent() {
        let decisions = |reverse_loss: f64| {
            let sat = LinkProfile::new(GEO_SATELLITE_DELAY, 0.01, 0).unwrap();
            let rev = LinkProfile::new(GEO_SATELLITE_DELAY, reverse_loss, 0).unwrap();
            let topo = Topology::chain(&["a", "b"], &[(sat, rev)]).unwrap();
            let mut net = Network::new(topo, 5);
            let mut out = Vec::new();
            for _ in 0..5000 {
                out.push(net.hop(Duration::ZERO, 0, 1, 100).is_some());
                net.hop(Duration::ZERO, 1, 0, 100);
            }
            out
        };
        assert_eq!(decisions(0.0), decisions(0.3));
    }

    #[test]
    fn multi_hop_arrivals_accumulate_delay() {
        let topo = Topology::satellite(Orbit::Leo, 0.0, 0).unwrap();
        let mut net = Network::new(topo, 1);
        let mut at = CLIENT;
        let mut t = Duration::ZERO;
        while at != SERVER {
            (at, t) = net.hop(t, at, SERVER, 1200).unwrap();
        }
        assert_eq!(t, CLIENT_PEP1_DELAY + LEO_SATELLITE_DELAY + PEP2_SERVER_DELAY);
    }
}
