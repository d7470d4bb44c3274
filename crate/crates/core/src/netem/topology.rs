use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use super::link::LinkProfile;
use super::NetemError;
use crate::net::NodeId;

pub const CLIENT: NodeId = 0;
pub const PEP1: NodeId = 1;
pub const PEP2: NodeId = 2;
pub const SERVER: NodeId = 3;
pub const NODE_NAMES: [&str; 4] = ["client", "pep1", "pep2", "server"];

pub const CLIENT_PEP1_DELAY: Duration = Duration::from_micros(400);
pub const GEO_SATELLITE_DELAY: Duration = Duration::from_millis(250);
pub const LEO_SATELLITE_DELAY: Duration = Duration::from_millis(16);
pub const PEP2_SERVER_DELAY: Duration = Duration::from_millis(40);
/// Server-to-client rate limit.
pub const DOWNLINK_RATE: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orbit {
    Geo,
    Leo,
}

impl Orbit {
    pub const ALL: [Orbit; 2] = [Orbit::Geo, Orbit::Leo];

    pub fn satellite_delay(self) -> Duration {
        match self {
            Orbit::Geo => GEO_SATELLITE_DELAY,
            Orbit::Leo => LEO_SATELLITE_DELAY,
        }
    }

    /// Client-to-server round-trip time without serialization.
    pub fn rtt(self) -> Duration {
        2 * (CLIENT_PEP1_DELAY + self.satellite_delay() + PEP2_SERVER_DELAY)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orbit::Geo => "geo",
            Orbit::Leo => "leo",
        }
    }
}

impl fmt::Display for Orbit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orbit {
    type Err = NetemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "geo" => Ok(Orbit::Geo),
            "leo" => Ok(Orbit::Leo),
            _ => Err(NetemError::UnknownOrbit(s.to_owned())),
        }
    }
}

/// A chain of nodes with a profile for each direction of each hop.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    names: Vec<String>,
    links: BTreeMap<(NodeId, NodeId), LinkProfile>,
}

impl Topology {
    /// `hops[i]` connects node `i` and `i + 1`: (forward, reverse).
    pub fn chain(names: &[&str], hops: &[(LinkProfile, LinkProfile)]) -> Result<Self, NetemError> {
        if names.len() != hops.len() + 1 {
            return Err(NetemError::InvalidChain { nodes: names.len(), hops: hops.len() });
        }
        let mut links = BTreeMap::new();
        for (i, &(fwd, rev)) in hops.iter().enumerate() {
            let a = i as NodeId;
            links.insert((a, a + 1), fwd);
            links.insert((a + 1, a), rev);
        }
        Ok(Self { names: names.iter().map(|s| s.to_string()).collect(), links })
    }

    /// Client, two PEP positions and server. `loss` applies to both
    /// directions of the satellite hop; `downlink_rate` (bits/s, 0 = none) to
    /// every server-to-client hop. Without PEPs the middle nodes only route.
    pub fn satellite(orbit: Orbit, loss: f64, downlink_rate: u64) -> Result<Self, NetemError> {
        let up = LinkProfile::delay_only;
        let down = |d| LinkProfile::new(d, 0.0, downlink_rate);
        let sat_up = LinkProfile::new(orbit.satellite_delay(), loss, 0)?;
        let sat_down = LinkProfile::new(orbit.satellite_delay(), loss, downlink_rate)?;
        Self::chain(
            &NODE_NAMES,
            &[
                (up(CLIENT_PEP1_DELAY), down(CLIENT_PEP1_DELAY)?),
                (sat_up, sat_down),
                (up(PEP2_SERVER_DELAY), down(PEP2_SERVER_DELAY)?),
            ],
        )
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, node: NodeId) -> &str {
        self.names.get(node as usize).map_or("?", String::as_str)
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> Option<&LinkProfile> {
        self.links.get(&(from, to))
    }

    pub fn links(&self) -> impl Iterator<Item = ((NodeId, NodeId), &LinkProfile)> {
        self.links.iter().map(|(&k, v)| (k, v))
    }

    /// Neighbour of `from` on the way to `to`.
    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        let n = self.names.len() as NodeId;
        if from >= n || to >= n || from == to {
            return None;
        }
        Some(if to > from { from + 1 } else { from - 1 })
    }

    /// Sum of one-way delays along the path.
    pub fn path_delay(&self, from: NodeId, to: NodeId) -> Duration {
        let mut total = Duration::ZERO;
        let mut at = from;
        while let Some(next) = self.next_hop(at, to) {
            total += self.links[&(at, next)].one_way_delay;
            at = next;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_has_both_directions() {
        let t = Topology::satellite(Orbit::Geo, 0.001, DOWNLINK_RATE).unwrap();
        for a in 0..3 {
            assert!(t.link(a, a + 1).is_some());
            assert!(t.link(a + 1, a).is_some());
        }
        assert!(t.link(0, 2).is_none());
        assert_eq!(t.link(PEP1, PEP2).unwrap().loss_probability, 0.001);
        assert_eq!(t.link(PEP2, PEP1).unwrap().rate_limit, DOWNLINK_RATE);
        assert_eq!(t.link(PEP1, PEP2).unwrap().rate_limit, 0);
        assert_eq!(t.link(CLIENT, PEP1).unwrap().loss_probability, 0.0);
    }

    #[test]
    fn round_trip_delays() {
        for (orbit, ms) in [(Orbit::Geo, 580.0), (Orbit::Leo, 112.0)] {
            let t = Topology::satellite(orbit, 0.0, 0).unwrap();
            let rtt = t.path_delay(CLIENT, SERVER) + t.path_delay(SERVER, CLIENT);
            assert_eq!(rtt, orbit.rtt());
            assert!((rtt.as_secs_f64() * 1e3 - ms).abs() <= 1.0, "{orbit}: {rtt:?}");
        }
    }

    #[test]
    fn routing_walks_the_chain() {
        let t = Topology::satellite(Orbit::Leo, 0.0, 0).unwrap();
        assert_eq!(t.next_hop(CLIENT, SERVER), Some(PEP1));
        assert_eq!(t.next_hop(SERVER, CLIENT), Some(PEP2));
        assert_eq!(t.next_hop(PEP1, PEP1), None);
        assert_eq!(t.next_hop(PEP1, 9), None);
    }

    #[test]
    fn orbit_parsing() {
        assert_eq!("GEO".parse::<Orbit>().unwrap(), Orbit::Geo);
        assert!("meo".parse::<Orbit>().is_err());
    }
}
