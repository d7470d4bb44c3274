//! Client and server hosts: connections plus the request/response application.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::crypto::{Side, MAX_RECORD_PAYLOAD};
use crate::handover::{ClientHandover, HandoverEvent};
use crate::net::{Addr, Datagram, FrameKinds};
use crate::transport::{stream, Connection, ConnectionConfig, Dir, Event};
use crate::xads::XadsSession;

/// Request payload meaning "send until the connection ends".
pub const UNBOUNDED: u64 = u64::MAX;
const REQUEST_LEN: usize = 8;
/// Unacknowledged response data the server keeps queued for unbounded requests.
const SEND_AHEAD: u64 = 4 << 20;

/// Deterministic response content for one stream of one connection.
pub fn response_rng(seed: u64, conn: usize, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_da7a);
    rng.set_stream(((conn as u64) << 40) | stream_id);
    rng
}

fn protocol_event(ev: &Event) -> Option<(&'static str, String)> {
    Some(match ev {
        Event::KeysEstablished => ("keys-established", String::new()),
        Event::HandshakeConfirmed => ("handshake-confirmed", String::new()),
        Event::HandshakeDoneReceived => ("handshake-done", String::new()),
        Event::PathMigrated { from, to } => ("path-migrated", format!("{from} -> {to}")),
        Event::PathValidationStarted { addr } => ("path-validation", addr.to_string()),
        Event::PathValidationFailed { addr } => ("path-validation-failed", addr.to_string()),
        Event::MigrationIgnored { from, confirmed } => {
            ("migration-ignored", format!("from={from} confirmed={confirmed}"))
        }
        Event::PeerReached { addr } => ("peer-reached", addr.to_string()),
        Event::DroppedStreamPacket { .. } => return None,
        Event::Closed(reason) => ("closed", format!("{reason:?}")),
    })
}

/// Per-connection results on the client.
#[derive(Debug, Clone, Default)]
pub struct ClientStats {
    pub keys_at: Option<Duration>,
    pub confirmed_at: Option<Duration>,
    pub first_app_send: Option<Duration>,
    /// When every requested resource was complete.
    pub completed_at: Option<Duration>,
    pub closed_at: Option<Duration>,
    pub received: u64,
    /// Cumulative plaintext after each delivery.
    pub timeline: Vec<(Duration, u64)>,
    /// SHA-256 over every received plaintext octet in delivery order.
    pub digest: [u8; 32],
}

#[derive(Debug)]
pub(crate) struct ClientConn {
    pub conn: Connection,
    pub handover: Option<ClientHandover>,
    pub xads: Option<XadsSession>,
    requests: Vec<u64>,
    expected: BTreeMap<u64, (u64, u64)>,
    pub stats: ClientStats,
    hasher: Sha256,
    pub captured: Option<Vec<u8>>,
}

#[derive(Debug)]
pub(crate) struct ClientHost {
    pub conns: Vec<ClientConn>,
    ports: BTreeMap<u16, (usize, bool)>,
    pub events: VecDeque<HandoverEvent>,
}

impl ClientHost {
    pub fn new() -> Self {
        Self { conns: Vec::new(), ports: BTreeMap::new(), events: VecDeque::new() }
    }

    /// Adds a connection that will request `requests` (resource sizes) once keys exist.
    pub fn connect(
        &mut self,
        config: ConnectionConfig,
        local: Addr,
        remote: Addr,
        seed: u64,
        handover: Option<ClientHandover>,
        requests: Vec<u64>,
        capture: bool,
    ) {
        let index = self.conns.len();
        self.ports.insert(local.port, (index, false));
        if let Some(h) = &handover {
            self.ports.insert(h.oob_addr().port, (index, true));
        }
        self.conns.push(ClientConn {
            conn: Connection::connect(config, local, remote, seed, Duration::ZERO),
            handover,
            xads: None,
            requests,
            expected: BTreeMap::new(),
            stats: ClientStats::default(),
            hasher: Sha256::new(),
            captured: capture.then(Vec::new),
        });
    }

    /// Seals the running digests into the stats.
    pub fn finish(&mut self) {
        for c in &mut self.conns {
            c.stats.digest = c.hasher.clone().finalize().into();
        }
    }

    pub fn handle_datagram(&mut self, now: Duration, d: Datagram) {
        let Some(&(i, oob)) = self.ports.get(&d.dst.port) else { return };
        let c = &mut self.conns[i];
        if oob {
            if let Some(h) = c.handover.as_mut() {
                h.handle_datagram(now, &mut c.conn, d);
            }
        } else {
            c.conn.handle_datagram(now, d);
        }
        self.process(now);
    }

    pub fn handle_timeout(&mut self, now: Duration) {
        for c in &mut self.conns {
            if c.conn.poll_timeout().is_some_and(|t| t <= now) {
                c.conn.handle_timeout(now);
            }
            if let Some(h) = c.handover.as_mut() {
                if h.poll_timeout().is_some_and(|t| t <= now) {
                    h.handle_timeout(now, &mut c.conn);
                }
            }
        }
        self.process(now);
    }

    pub fn poll_timeout(&self) -> Option<Duration> {
        self.conns
            .iter()
            .flat_map(|c| [c.conn.poll_timeout(), c.handover.as_ref().and_then(ClientHandover::poll_timeout)])
            .flatten()
            .min()
    }

    pub fn poll_transmit(&mut self, now: Duration) -> Option<Datagram> {
        for c in &mut self.conns {
            if let Some(d) = c.handover.as_mut().and_then(|h| h.poll_transmit(now)) {
                return Some(d);
            }
            if let Some(d) = c.conn.poll_transmit(now) {
                if d.info.frames.contains(FrameKinds::STREAM) && c.stats.first_app_send.is_none() {
                    c.stats.first_app_send = Some(now);
                }
                return Some(d);
            }
        }
        None
    }

    fn log(&mut self, time: Duration, event: &'static str, details: String) {
        self.events.push_back(HandoverEvent { time, event, details });
    }

    fn process(&mut self, now: Duration) {
        for i in 0..self.conns.len() {
            let mut log = Vec::new();
            let c = &mut self.conns[i];
            while let Some(ev) = c.conn.poll_event() {
                if let Some(h) = c.handover.as_mut() {
                    h.on_connection_event(now, &mut c.conn, &ev);
                }
                match &ev {
                    Event::KeysEstablished => {
                        c.stats.keys_at = Some(now);
                        if c.conn.smaq_negotiated() {
                            let exporter = c.conn.exporter_secret().expect("keys established");
                            c.xads = Some(XadsSession::new(Side::Client, exporter));
                        }
                        c.send_requests();
                    }
                    Event::HandshakeConfirmed => c.stats.confirmed_at = Some(now),
                    Event::Closed(_) => c.stats.closed_at = Some(now),
                    _ => {}
                }
                if let Some((name, details)) = protocol_event(&ev) {
                    log.push((name, format!("{} {details}", c.conn.local_addr())));
                }
            }
            if let Some(h) = c.handover.as_mut() {
                while let Some(e) = h.poll_event() {
                    log.push((e.event, e.details));
                }
            }
            c.receive(now);
            for (event, details) in log {
                self.log(now, event, details);
            }
        }
    }

    pub fn all_complete(&self) -> bool {
        self.conns.iter().all(|c| c.stats.completed_at.is_some())
    }
}

impl ClientConn {
    fn send_requests(&mut self) {
        for size in std::mem::take(&mut self.requests) {
            let id = self.conn.open_stream(Dir::Bi);
            let plain = size.to_be_bytes();
            let data = match self.xads.as_mut() {
                Some(x) => x.seal(id, &plain).expect("fresh lane"),
                None => plain.to_vec(),
            };
            // Writes before close cannot fail.
            let _ = self.conn.write(id, Bytes::from(data));
            let _ = self.conn.finish(id);
            self.expected.insert(id, (size, 0));
        }
    }

    fn receive(&mut self, now: Duration) {
        let mut got = 0;
        for id in self.conn.take_readable() {
            while let Some(chunk) = self.conn.read(id) {
                let plain = match self.xads.as_mut() {
                    Some(x) => match x.open(id, &chunk) {
                        Ok(p) => p,
                        Err(_) => {
                            self.conn.close(crate::transport::close_code::CRYPTO_ERROR);
                            return;
                        }
                    },
                    None => chunk.to_vec(),
                };
                if plain.is_empty() {
                    continue;
                }
                got += plain.len() as u64;
                self.hasher.update(&plain);
                if let Some(cap) = self.captured.as_mut() {
                    cap.extend_from_slice(&plain);
                }
                if let Some((_, seen)) = self.expected.get_mut(&id) {
                    *seen += plain.len() as u64;
                }
            }
        }
        if got > 0 {
            self.stats.received += got;
            self.stats.timeline.push((now, self.stats.received));
        }
        if self.stats.completed_at.is_none()
            && !self.expected.is_empty()
            && self.expected.values().all(|&(size, seen)| size != UNBOUNDED && seen >= size)
        {
            self.stats.completed_at = Some(now);
        }
    }
}

#[derive(Debug)]
struct Response {
    remaining: u64,
    rng: ChaCha8Rng,
}

#[derive(Debug)]
pub(crate) struct ServerConn {
    pub conn: Connection,
    index: usize,
    pub xads: Option<XadsSession>,
    requests: BTreeMap<u64, Vec<u8>>,
    responses: BTreeMap<u64, Response>,
}

#[derive(Debug)]
pub(crate) struct ServerHost {
    config: ConnectionConfig,
    seed: u64,
    /// Listening port to connection index.
    pub conns: BTreeMap<u16, ServerConn>,
    pub events: VecDeque<HandoverEvent>,
}

impl ServerHost {
    pub fn new(config: ConnectionConfig, seed: u64) -> Self {
        Self { config, seed, conns: BTreeMap::new(), events: VecDeque::new() }
    }

    /// `index` is the connection's position in the client's list; the
    /// listening port identifies it.
    pub fn handle_datagram(&mut self, now: Duration, d: Datagram, index: usize) {
        let port = d.dst.port;
        match self.conns.get_mut(&port) {
            Some(s) => s.conn.handle_datagram(now, d),
            None => {
                let seed = self.seed ^ ((index as u64 + 1) << 32);
                let Ok(conn) = Connection::accept(self.config.clone(), d.dst, d, seed, now) else { return };
                let s = ServerConn {
                    conn,
                    index,
                    xads: None,
                    requests: BTreeMap::new(),
                    responses: BTreeMap::new(),
                };
                self.conns.insert(port, s);
            }
        }
        self.process(now);
    }

    pub fn handle_timeout(&mut self, now: Duration) {
        for s in self.conns.values_mut() {
            if s.conn.poll_timeout().is_some_and(|t| t <= now) {
                s.conn.handle_timeout(now);
            }
        }
        self.process(now);
    }

    pub fn poll_timeout(&self) -> Option<Duration> {
        self.conns.values().filter_map(|s| s.conn.poll_timeout()).min()
    }

    pub fn poll_transmit(&mut self, now: Duration) -> Option<Datagram> {
        for s in self.conns.values_mut() {
            if let Some(d) = s.conn.poll_transmit(now) {
                s.pump();
                return Some(d);
            }
        }
        None
    }

    fn process(&mut self, now: Duration) {
        let seed = self.seed;
        let mut log = Vec::new();
        for s in self.conns.values_mut() {
            while let Some(ev) = s.conn.poll_event() {
                if ev == Event::KeysEstablished && s.conn.smaq_negotiated() {
                    if let Some(exporter) = s.conn.exporter_secret() {
                        s.xads = Some(XadsSession::new(Side::Server, exporter));
                    }
                }
                if let Some((name, details)) = protocol_event(&ev) {
                    log.push((name, format!("{} {details}", s.conn.local_addr())));
                }
            }
            s.receive(seed);
            s.pump();
        }
        for (event, details) in log {
            self.events.push_back(HandoverEvent { time: now, event, details });
        }
    }
}

impl ServerConn {
    fn receive(&mut self, seed: u64) {
        for id in self.conn.take_readable() {
            while let Some(chunk) = self.conn.read(id) {
                let plain = match self.xads.as_mut() {
                    Some(x) => match x.open(id, &chunk) {
                        Ok(p) => p,
                        Err(_) => {
                            self.conn.close(crate::transport::close_code::CRYPTO_ERROR);
                            return;
                        }
                    },
                    None => chunk.to_vec(),
                };
                self.requests.entry(id).or_default().extend_from_slice(&plain);
            }
            let req = &self.requests[&id];
            if req.len() >= REQUEST_LEN && !self.responses.contains_key(&id) && stream::is_bidi(id) {
                let size = u64::from_be_bytes(req[..REQUEST_LEN].try_into().expect("length checked"));
                self.responses.insert(id, Response { remaining: size, rng: response_rng(seed, self.index, id) });
            }
        }
    }

    /// Tops up response data: bounded responses are written whole, unbounded
    /// ones are kept `SEND_AHEAD` octets ahead of acknowledgements.
    fn pump(&mut self) {
        if self.conn.is_closed() {
            return;
        }
        let mut finished = Vec::new();
        for (&id, r) in self.responses.iter_mut() {
            while r.remaining > 0 {
                if r.remaining == UNBOUNDED && self.conn.send_buffered() >= SEND_AHEAD {
                    break;
                }
                let n = r.remaining.min(MAX_RECORD_PAYLOAD as u64) as usize;
                let mut plain = vec![0u8; n];
                r.rng.fill_bytes(&mut plain);
                if r.remaining != UNBOUNDED {
                    r.remaining -= n as u64;
                }
                let data = match self.xads.as_mut() {
                    Some(x) => x.seal(id, &plain).expect("lane key"),
                    None => plain,
                };
                let _ = self.conn.write(id, Bytes::from(data));
            }
            if r.remaining == 0 {
                let _ = self.conn.finish(id);
                finished.push(id);
            }
        }
        for id in finished {
            self.responses.remove(&id);
        }
    }
}
