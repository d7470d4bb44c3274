//! Single-run simulator: endpoints and middleboxes on the emulated chain.
//!
//! Node 0 hosts the client, node 3 the server. Nodes 1 and 2 host PEP1 and
//! PEP2 when configured and otherwise only route. Connection `i` uses client
//! port `CLIENT_PORT + i`, server port `SERVER_PORT + i` and client channel
//! port `CLIENT_OOB_PORT + i`.

mod config;
mod endpoint;
pub mod secrecy;

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use config::{endpoint_reno, DropRule, Faults, Mode, SimConfig, UnknownMode, Workload, ENDPOINT_LOSS_REDUCTION, RESTORE_DELAY, SATELLITE_CAP_FACTOR};
pub use endpoint::{response_rng, ClientStats, UNBOUNDED};

use crate::crypto::{Secret, SecretLabel};
use crate::handover::{
    ClientHandover, ClientHandoverConfig, ClientPhase, Downstream, HandoverEvent, Middlebox, MiddleboxConfig,
    SessionOutcome, SmaqState,
};
use crate::net::{Addr, Datagram, NodeId};
use crate::netem::{Network, NetemError, Scheduler, Trace, CLIENT, CLIENT_PEP1_DELAY, NODE_NAMES, PEP1, PEP2, SERVER};
use endpoint::{ClientHost, ServerHost};

pub const CLIENT_PORT: u16 = 1000;
pub const CLIENT_OOB_PORT: u16 = 7100;
pub const SERVER_PORT: u16 = 4430;
pub const PEP_OOB_PORT: u16 = 7000;

/// Upper bound on runs that have nothing left to wait for.
const HANDSHAKE_HORIZON: Duration = Duration::from_secs(20);

#[derive(Debug)]
enum Ev {
    Arrive { node: NodeId, dgram: Datagram },
    Wake { node: NodeId },
}

/// Outcome of the handover on one client connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverReport {
    pub phase: ClientPhase,
    pub state_created_at: Option<Duration>,
    pub migrated_at: Option<Duration>,
}

impl HandoverReport {
    pub fn migration_time(&self) -> Option<Duration> {
        Some(self.migrated_at? - self.state_created_at?)
    }
}

#[derive(Debug, Clone)]
pub struct ConnectionReport {
    pub stats: ClientStats,
    pub handover: Option<HandoverReport>,
    pub smaq_negotiated: bool,
    /// Plaintext received by the client application, when captured.
    pub captured: Option<Vec<u8>>,
    pub client_closed: bool,
    pub server_closed: bool,
}

/// What one middlebox held and emitted.
#[derive(Debug, Clone, Default)]
pub struct MiddleboxReport {
    pub node: NodeId,
    pub outcomes: Vec<(u64, SessionOutcome)>,
    pub erased_states: Vec<SmaqState>,
    pub live_sessions: usize,
    pub max_buffered: u64,
    /// Audit mode only.
    pub held: Vec<Vec<u8>>,
    /// Audit mode only.
    pub emitted: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub end: Duration,
    pub connections: Vec<ConnectionReport>,
    pub middleboxes: Vec<MiddleboxReport>,
    /// Exporter and XADS secrets of both endpoints.
    pub endpoint_secrets: Vec<Secret>,
    pub trace: Trace,
    pub delivered: u64,
    pub dropped: u64,
}

impl SimReport {
    /// Initial-to-last-byte time over all connections, if every resource arrived.
    pub fn page_load_time(&self) -> Option<Duration> {
        self.connections.iter().map(|c| c.stats.completed_at).collect::<Option<Vec<_>>>()?.into_iter().max()
    }

    /// Plaintext bytes the client had received at `t`, summed over connections.
    pub fn bytes_at(&self, t: Duration) -> u64 {
        self.connections
            .iter()
            .map(|c| {
                let tl = &c.stats.timeline;
                let i = tl.partition_point(|&(at, _)| at <= t);
                if i == 0 {
                    0
                } else {
                    tl[i - 1].1
                }
            })
            .sum()
    }
}

pub struct Simulation {
    config: SimConfig,
    net: Network,
    sched: Scheduler<Ev>,
    client: ClientHost,
    server: ServerHost,
    peps: [Option<Middlebox>; 2],
    armed: [Option<Duration>; 4],
    drop_counts: Vec<u32>,
    trace: Trace,
    emitted: [Vec<Vec<u8>>; 2],
    delivered: u64,
    dropped: u64,
}

/// Secret shared between the client and the middleboxes for the out-of-band channel.
fn channel_psk(seed: u64) -> Secret {
    let digest: [u8; 32] = Sha256::new().chain_update(b"oob-psk").chain_update(seed.to_be_bytes()).finalize().into();
    Secret::new(digest, SecretLabel::Intermediate("oob psk"))
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, NetemError> {
        let topology = config.build_topology()?;
        let net = Network::new(topology, config.seed);
        let psk = channel_psk(config.seed);
        let mut peps = [None, None];
        let pep_count = if config.mode == crate::sim::Mode::SmaqPep { config.pep_count.min(2) } else { 0 };
        let sat_rtt = config.satellite_rtt();
        if pep_count >= 1 {
            let mut c = MiddleboxConfig::new(PEP1, psk.clone());
            c.oob_port = PEP_OOB_PORT;
            c.client_facing = config.client_leg_config();
            c.restore_delay = RESTORE_DELAY;
            c.audit = config.audit;
            if pep_count == 2 {
                c.server_facing = config.satellite_leg_config(sat_rtt);
                c.downstream = Some(Downstream { oob: Addr::new(PEP2, PEP_OOB_PORT), rtt_estimate: sat_rtt });
            } else {
                c.server_facing = config.satellite_leg_config(sat_rtt + 2 * crate::netem::PEP2_SERVER_DELAY);
            }
            if let Some(caps) = &config.faults.capabilities[0] {
                c.capabilities = caps.clone();
            }
            peps[0] = Some(Middlebox::new(c, config.seed ^ 0x9e37_79b9));
        }
        if pep_count == 2 {
            let mut c = MiddleboxConfig::new(PEP2, psk.clone());
            c.oob_port = PEP_OOB_PORT;
            c.client_facing = config.satellite_leg_config(sat_rtt);
            c.server_facing = config.server_leg_config();
            c.restore_delay = RESTORE_DELAY;
            c.audit = config.audit;
            if let Some(caps) = &config.faults.capabilities[1] {
                c.capabilities = caps.clone();
            }
            peps[1] = Some(Middlebox::new(c, config.seed ^ 0x7f4a_7c15));
        }

        let endpoint = config.endpoint_config();
        let mut client = ClientHost::new();
        let requests: Vec<Vec<u64>> = match &config.workload {
            crate::sim::Workload::Handshake => vec![Vec::new()],
            crate::sim::Workload::Bulk => vec![vec![UNBOUNDED]],
            crate::sim::Workload::Page(conns) => conns.clone(),
        };
        let mut session_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e55_1011);
        for (i, reqs) in requests.into_iter().enumerate() {
            let local = Addr::new(CLIENT, CLIENT_PORT + i as u16);
            let remote = Addr::new(SERVER, SERVER_PORT + i as u16);
            let handover = (pep_count > 0).then(|| {
                let hc = ClientHandoverConfig::new(
                    Addr::new(PEP1, PEP_OOB_PORT),
                    Addr::new(CLIENT, CLIENT_OOB_PORT + i as u16),
                    psk.clone(),
                    2 * CLIENT_PEP1_DELAY,
                );
                ClientHandover::new(hc, rand::Rng::gen(&mut session_rng))
            });
            let seed = config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64;
            client.connect(endpoint.clone(), local, remote, seed, handover, reqs, config.capture);
        }
        let server = ServerHost::new(endpoint, config.seed);
        let drop_counts = vec![0; config.faults.drops.len()];
        Ok(Self {
            trace: Trace::new(true),
            config,
            net,
            sched: Scheduler::default(),
            client,
            server,
            peps,
            armed: [None; 4],
            drop_counts,
            emitted: [Vec::new(), Vec::new()],
            delivered: 0,
            dropped: 0,
        })
    }

    pub fn now(&self) -> Duration {
        self.sched.now()
    }

    fn done(&self) -> bool {
        match self.config.workload {
            crate::sim::Workload::Handshake => self.client.conns.iter().all(|c| match &c.handover {
                Some(h) => h.phase().is_terminal() && h.phase() != ClientPhase::Idle || c.conn.is_closed(),
                None => c.conn.is_confirmed() || c.conn.is_closed(),
            }),
            crate::sim::Workload::Bulk => false,
            crate::sim::Workload::Page(_) => {
                self.client.all_complete() || self.client.conns.iter().all(|c| c.conn.is_closed())
            }
        }
    }

    /// Runs to completion and reports.
    pub fn run(mut self) -> SimReport {
        let end = match self.config.workload {
            crate::sim::Workload::Handshake => self.config.duration.min(HANDSHAKE_HORIZON),
            _ => self.config.duration,
        };
        self.service(CLIENT);
        while let Some(t) = self.sched.peek_time() {
            if t > end || self.done() {
                break;
            }
            let (now, ev) = self.sched.pop().expect("peeked");
            match ev {
                Ev::Arrive { node, dgram } => self.arrive(now, node, dgram),
                Ev::Wake { node } => {
                    if self.armed[node as usize] == Some(now) {
                        self.armed[node as usize] = None;
                        self.timeout(now, node);
                    }
                }
            }
        }
        self.report()
    }

    fn arrive(&mut self, now: Duration, node: NodeId, dgram: Datagram) {
        if dgram.dst.node != node {
            self.forward(now, node, dgram);
            return;
        }
        self.delivered += 1;
        if self.config.trace_packets {
            self.trace.record(now, NODE_NAMES[node as usize], "rx", dgram.summary());
        }
        match node {
            CLIENT => self.client.handle_datagram(now, dgram),
            SERVER => {
                let index = dgram.dst.port.wrapping_sub(SERVER_PORT) as usize;
                self.server.handle_datagram(now, dgram, index);
            }
            PEP1 | PEP2 => match self.peps[node as usize - 1].as_mut() {
                Some(mb) => mb.handle_datagram(now, dgram),
                None => return,
            },
            _ => return,
        }
        self.service(node);
    }

    fn timeout(&mut self, now: Duration, node: NodeId) {
        match node {
            CLIENT => self.client.handle_timeout(now),
            SERVER => self.server.handle_timeout(now),
            PEP1 | PEP2 => {
                if let Some(mb) = self.peps[node as usize - 1].as_mut() {
                    mb.handle_timeout(now);
                }
            }
            _ => {}
        }
        self.service(node);
    }

    /// Flushes a host's transmissions and events and re-arms its timer.
    fn service(&mut self, node: NodeId) {
        let now = self.sched.now();
        let name = NODE_NAMES[node as usize];
        loop {
            let d = match node {
                CLIENT => self.client.poll_transmit(now),
                SERVER => self.server.poll_transmit(now),
                _ => self.peps[node as usize - 1].as_mut().and_then(|m| m.poll_transmit(now)),
            };
            let Some(d) = d else { break };
            self.emit(now, node, d);
        }
        let mut events: Vec<HandoverEvent> = Vec::new();
        match node {
            CLIENT => events.extend(self.client.events.drain(..)),
            SERVER => events.extend(self.server.events.drain(..)),
            _ => {
                if let Some(mb) = self.peps[node as usize - 1].as_mut() {
                    while let Some(e) = mb.poll_event() {
                        events.push(e);
                    }
                }
            }
        }
        for e in events {
            self.trace.record(e.time, name, e.event, e.details);
        }
        let next = match node {
            CLIENT => self.client.poll_timeout(),
            SERVER => self.server.poll_timeout(),
            _ => self.peps[node as usize - 1].as_ref().and_then(Middlebox::poll_timeout),
        };
        if next != self.armed[node as usize] {
            self.armed[node as usize] = next;
            if let Some(t) = next {
                self.sched.schedule(t, Ev::Wake { node });
            }
        }
    }

    fn emit(&mut self, now: Duration, node: NodeId, d: Datagram) {
        let (src, dst, kind, frames) = (d.src.node, d.dst.node, d.info.kind, d.info.frames);
        for (i, rule) in self.config.faults.drops.iter().enumerate() {
            if rule.matches(src, dst, kind, frames) && rule.limit.is_none_or(|l| self.drop_counts[i] < l) {
                self.drop_counts[i] += 1;
                self.dropped += 1;
                self.trace.record(now, NODE_NAMES[node as usize], "fault-drop", d.summary());
                return;
            }
        }
        if self.config.audit && (node == PEP1 || node == PEP2) {
            self.emitted[node as usize - 1].push(d.payload.clone());
        }
        if self.config.trace_packets {
            self.trace.record(now, NODE_NAMES[node as usize], "tx", d.summary());
        }
        self.forward(now, node, d);
    }

    fn forward(&mut self, now: Duration, at: NodeId, d: Datagram) {
        if d.dst.node == at {
            self.sched.schedule(now, Ev::Arrive { node: at, dgram: d });
            return;
        }
        match self.net.hop(now, at, d.dst.node, d.len()) {
            Some((next, t)) => self.sched.schedule(t, Ev::Arrive { node: next, dgram: d }),
            None => {
                self.dropped += 1;
                if self.config.trace_packets {
                    self.trace.record(now, NODE_NAMES[at as usize], "drop", d.summary());
                }
            }
        }
    }

    fn report(mut self) -> SimReport {
        self.client.finish();
        let mut endpoint_secrets = Vec::new();
        let connections = self
            .client
            .conns
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                endpoint_secrets.extend(c.conn.exporter_secret().cloned());
                if let Some(x) = &c.xads {
                    endpoint_secrets.extend(x.secrets().cloned());
                }
                let server = self.server.conns.get(&(SERVER_PORT + i as u16));
                if let Some(s) = server {
                    endpoint_secrets.extend(s.conn.exporter_secret().cloned());
                    if let Some(x) = &s.xads {
                        endpoint_secrets.extend(x.secrets().cloned());
                    }
                }
                ConnectionReport {
                    handover: c.handover.as_ref().map(|h| HandoverReport {
                        phase: h.phase(),
                        state_created_at: h.state_created_at(),
                        migrated_at: h.migrated_at(),
                    }),
                    smaq_negotiated: c.conn.smaq_negotiated(),
                    client_closed: c.conn.is_closed(),
                    server_closed: server.is_some_and(|s| s.conn.is_closed()),
                    stats: c.stats,
                    captured: c.captured,
                }
            })
            .collect();
        let mut emitted = self.emitted;
        let middleboxes = self
            .peps
            .iter()
            .enumerate()
            .filter_map(|(i, m)| {
                let m = m.as_ref()?;
                Some(MiddleboxReport {
                    node: m.config().node,
                    outcomes: m.outcomes().to_vec(),
                    erased_states: m.erased_states().to_vec(),
                    live_sessions: m.session_count(),
                    max_buffered: m.max_buffered(),
                    held: if self.config.audit { m.held_bytes() } else { Vec::new() },
                    emitted: std::mem::take(&mut emitted[i]),
                })
            })
            .collect();
        SimReport {
            end: self.sched.now(),
            connections,
            middleboxes,
            endpoint_secrets,
            trace: self.trace,
            delivered: self.delivered,
            dropped: self.dropped,
        }
    }
}

/// Convenience: build and run.
pub fn run(config: SimConfig) -> Result<SimReport, NetemError> {
    Ok(Simulation::new(config)?.run())
}
