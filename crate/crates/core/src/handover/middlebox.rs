use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use bytes::Bytes;

use crate::crypto::Secret;
use crate::net::{Addr, Datagram, NodeId};
use crate::transport::{
    close_code, CidOwner, CloseReason, Connection, ConnectionConfig, Event, IssuedCid, ResumeParams, Role,
};

use super::message::HandoverMessage;
use super::oob::{Delivered, OobEndpoint};
use super::state::SmaqState;
use super::{Capabilities, HandoverEvent, DEFAULT_MIGRATION_DEADLINE, PN_RESTORE_GAP};

/// The next middlebox in a transitive chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Downstream {
    pub oob: Addr,
    pub rtt_estimate: Duration,
}

#[derive(Debug, Clone)]
pub struct MiddleboxConfig {
    pub node: NodeId,
    pub oob_port: u16,
    /// Facade ports are allocated upward from here, two per session.
    pub first_facade_port: u16,
    pub psk: Secret,
    pub capabilities: Capabilities,
    pub client_facing: ConnectionConfig,
    pub server_facing: ConnectionConfig,
    pub downstream: Option<Downstream>,
    pub migration_deadline: Duration,
    /// Time to rebuild connection state from an offer before the facades
    /// send their first PING.
    pub restore_delay: Duration,
    /// Keep a copy of every octet string the middlebox stores, for inspection.
    pub audit: bool,
}

impl MiddleboxConfig {
    pub fn new(node: NodeId, psk: Secret) -> Self {
        Self {
            node,
            oob_port: 7000,
            first_facade_port: 20000,
            psk,
            capabilities: Capabilities::default(),
            client_facing: ConnectionConfig::default(),
            server_facing: ConnectionConfig::default(),
            downstream: None,
            migration_deadline: DEFAULT_MIGRATION_DEADLINE,
            restore_delay: Duration::ZERO,
            audit: false,
        }
    }

    pub fn oob_addr(&self) -> Addr {
        Addr::new(self.node, self.oob_port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DownstreamState {
    None,
    Pending { deadline: Duration },
    Accepted { facade: Addr },
    Failed,
}

/// How a session ended, for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    Rejected(super::ErrorReason),
    Closed(CloseReason),
    MigrationFailed,
}

#[derive(Debug)]
struct Session {
    state: SmaqState,
    cf: Connection,
    sf: Connection,
    cf_ready: bool,
    sf_ready: bool,
    downstream: DownstreamState,
    deadline: Duration,
    finished: BTreeSet<(bool, u64)>,
}

#[derive(Debug)]
pub struct Middlebox {
    config: MiddleboxConfig,
    oob: OobEndpoint,
    sessions: BTreeMap<u64, Session>,
    ports: BTreeMap<u16, (u64, bool)>,
    next_port: u16,
    seed: u64,
    events: VecDeque<HandoverEvent>,
    outcomes: Vec<(u64, SessionOutcome)>,
    held: Vec<Bytes>,
    erased_states: Vec<SmaqState>,
    max_buffered: u64,
}

impl Middlebox {
    pub fn new(config: MiddleboxConfig, seed: u64) -> Self {
        Self {
            oob: OobEndpoint::new(config.oob_addr(), config.psk.clone()),
            next_port: config.first_facade_port,
            config,
            sessions: BTreeMap::new(),
            ports: BTreeMap::new(),
            seed,
            events: VecDeque::new(),
            outcomes: Vec::new(),
            held: Vec::new(),
            erased_states: Vec::new(),
            max_buffered: 0,
        }
    }

    pub fn config(&self) -> &MiddleboxConfig {
        &self.config
    }

    pub fn oob_addr(&self) -> Addr {
        self.oob.local_addr()
    }

    pub fn poll_event(&mut self) -> Option<HandoverEvent> {
        self.events.pop_front()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn outcomes(&self) -> &[(u64, SessionOutcome)] {
        &self.outcomes
    }

    /// Both facades of `session` have reached their peers.
    pub fn is_spliced(&self, session: u64) -> bool {
        self.sessions.get(&session).is_some_and(|s| s.cf_ready && s.sf_ready)
    }

    pub fn facades(&self, session: u64) -> Option<(&Connection, &Connection)> {
        self.sessions.get(&session).map(|s| (&s.cf, &s.sf))
    }

    /// Largest amount of spliced data waiting in facade send buffers.
    pub fn max_buffered(&self) -> u64 {
        self.max_buffered
    }

    /// Every octet string the middlebox has stored: handed-over states and
    /// spliced stream data (audit mode), plus live state and pending channel
    /// messages.
    pub fn held_bytes(&self) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = self.held.iter().map(|b| b.to_vec()).collect();
        out.extend(self.sessions.values().map(|s| s.state.to_bytes()));
        out.extend(self.oob.held().map(<[u8]>::to_vec));
        out
    }

    /// States dropped at session end; all secrets must be zero.
    pub fn erased_states(&self) -> &[SmaqState] {
        &self.erased_states
    }

    fn log(&mut self, now: Duration, event: &'static str, details: String) {
        self.events.push_back(HandoverEvent { time: now, event, details });
    }

    fn hold(&mut self, data: &[u8]) {
        if self.config.audit {
            self.held.push(Bytes::copy_from_slice(data));
        }
    }

    // ----- I/O ---------------------------------------------------------------

    pub fn handle_datagram(&mut self, now: Duration, dgram: Datagram) {
        if dgram.dst == self.oob.local_addr() {
            if let Some(d) = self.oob.handle_datagram(now, dgram) {
                self.on_message(now, d);
            }
        } else if let Some(&(id, client_facing)) = self.ports.get(&dgram.dst.port) {
            if let Some(s) = self.sessions.get_mut(&id) {
                let conn = if client_facing { &mut s.cf } else { &mut s.sf };
                conn.handle_datagram(now, dgram);
            }
        }
        self.process(now);
    }

    pub fn poll_transmit(&mut self, now: Duration) -> Option<Datagram> {
        if let Some(d) = self.oob.poll_transmit(now) {
            return Some(d);
        }
        for s in self.sessions.values_mut() {
            if let Some(d) = s.cf.poll_transmit(now).or_else(|| s.sf.poll_transmit(now)) {
                return Some(d);
            }
        }
        // CLOSE frames are out; sessions may now be dropped.
        self.retire(now);
        None
    }

    pub fn poll_timeout(&self) -> Option<Duration> {
        let mut t = self.oob.poll_timeout();
        let mut consider = |c: Option<Duration>| {
            if let Some(c) = c {
                t = Some(t.map_or(c, |x: Duration| x.min(c)));
            }
        };
        for s in self.sessions.values() {
            consider(s.cf.poll_timeout());
            consider(s.sf.poll_timeout());
            if !(s.cf_ready && s.sf_ready) && s.deadline != Duration::MAX {
                consider(Some(s.deadline));
            }
            if let DownstreamState::Pending { deadline } = s.downstream {
                consider(Some(deadline));
            }
        }
        t
    }

    pub fn handle_timeout(&mut self, now: Duration) {
        for s in self.sessions.values_mut() {
            if s.cf.poll_timeout().is_some_and(|t| t <= now) {
                s.cf.handle_timeout(now);
            }
            if s.sf.poll_timeout().is_some_and(|t| t <= now) {
                s.sf.handle_timeout(now);
            }
        }
        let ids: Vec<u64> = self.sessions.keys().copied().collect();
        for id in ids {
            let s = &self.sessions[&id];
            if let DownstreamState::Pending { deadline } = s.downstream {
                if deadline <= now {
                    self.downstream_failed(now, id, "timeout".into());
                }
            }
            let s = &self.sessions[&id];
            if !(s.cf_ready && s.sf_ready) && s.deadline <= now && s.deadline != Duration::MAX {
                self.log(now, "migration-failed", format!("session={id:016x}"));
                let s = self.sessions.get_mut(&id).unwrap();
                s.deadline = Duration::MAX;
                end_facade(&mut s.cf, s.cf_ready, close_code::MIGRATION_FAILED);
                end_facade(&mut s.sf, s.sf_ready, close_code::MIGRATION_FAILED);
                self.outcomes.push((id, SessionOutcome::MigrationFailed));
            }
        }
        self.process(now);
    }

    // ----- handover ----------------------------------------------------------

    fn on_message(&mut self, now: Duration, d: Delivered) {
        let Delivered { from, session, message } = d;
        self.log(now, "oob-rx", format!("{} from={} session={session:016x}", message.name(), from));
        match message {
            HandoverMessage::StateOffer(state) => self.on_offer(now, from, session, state),
            HandoverMessage::SmaqOk { facade } => {
                if let Some(s) = self.sessions.get_mut(&session) {
                    if matches!(s.downstream, DownstreamState::Pending { .. }) {
                        s.downstream = DownstreamState::Accepted { facade };
                        s.sf.expect_peer_migration(Some(facade));
                        self.log(now, "downstream-accepted", format!("facade={facade}"));
                    }
                }
            }
            HandoverMessage::SmaqError(reason) => {
                if self.sessions.get(&session).is_some_and(|s| matches!(s.downstream, DownstreamState::Pending { .. })) {
                    self.downstream_failed(now, session, reason.to_string());
                }
            }
        }
    }

    fn on_offer(&mut self, now: Duration, from: Addr, session: u64, mut state: SmaqState) {
        if self.sessions.contains_key(&session) {
            return;
        }
        if let Err(reason) = self.config.capabilities.check(&state) {
            state.wipe();
            self.erased_states.push(state);
            self.log(now, "restore-rejected", format!("{reason} session={session:016x}"));
            self.outcomes.push((session, SessionOutcome::Rejected(reason)));
            let _ = self.oob.send(now, from, self.config.client_facing.congestion.initial_rtt, session, &HandoverMessage::SmaqError(reason));
            return;
        }
        let bytes = state.to_bytes();
        self.hold(&bytes);

        let node = self.config.node;
        let cf_addr = Addr::new(node, self.next_port);
        let sf_addr = Addr::new(node, self.next_port + 1);
        self.next_port += 2;
        let (cf, sf) = self.restore(now, &state, cf_addr, sf_addr, session);
        self.ports.insert(cf_addr.port, (session, true));
        self.ports.insert(sf_addr.port, (session, false));
        self.log(
            now,
            "restored",
            format!("session={session:016x} client={} server={} cf={cf_addr} sf={sf_addr}", state.client_addr(), state.server_addr()),
        );
        let reply = HandoverMessage::SmaqOk { facade: cf_addr };
        let _ = self.oob.send(now, from, self.config.client_facing.congestion.initial_rtt, session, &reply);

        let ready = now + self.config.restore_delay;
        let mut s = Session {
            state,
            cf,
            sf,
            cf_ready: false,
            sf_ready: false,
            downstream: DownstreamState::None,
            deadline: now + self.config.migration_deadline,
            finished: BTreeSet::new(),
        };
        s.cf.start_probing_at(now, ready);
        match self.config.downstream {
            Some(down) => {
                s.sf.set_hold_streams(true);
                let altered = s.state.with_client_addr(sf_addr);
                let offer = HandoverMessage::StateOffer(altered);
                match self.oob.send(now, down.oob, down.rtt_estimate, session, &offer) {
                    Ok(_) => {
                        s.downstream = DownstreamState::Pending { deadline: now + 3 * down.rtt_estimate };
                        self.log(now, "offer-downstream", format!("to={} client={sf_addr}", down.oob));
                    }
                    Err(_) => {
                        s.downstream = DownstreamState::Failed;
                        s.sf.set_hold_streams(false);
                        s.sf.start_probing_at(now, ready);
                    }
                }
            }
            None => s.sf.start_probing_at(now, ready),
        }
        self.log(now, "ping-start", format!("cf={} -> {} sf={} -> {}", cf_addr, s.cf.remote_addr(), sf_addr, s.sf.remote_addr()));
        self.sessions.insert(session, s);
    }

    fn restore(&self, now: Duration, state: &SmaqState, cf_addr: Addr, sf_addr: Addr, session: u64) -> (Connection, Connection) {
        let client_cid = state.cid(CidOwner::Client).expect("checked by decode");
        let server_cid = state.cid(CidOwner::Server).expect("checked by decode");
        let issued = |owner, cid| IssuedCid {
            owner,
            cid,
            sequence: state.active_cids.iter().find(|c| c.cid == cid).map_or(0, |c| c.sequence),
            reset_token: state.reset_token(cid).unwrap_or([0; 16]),
        };
        let pn = state.packet_numbers;
        let next = |highest: Option<u64>| highest.map_or(0, |h| h + 1) + PN_RESTORE_GAP;
        let (client_params, server_params) = state.transport_parameters.clone();
        let cf = ResumeParams {
            role: Role::MiddleboxClientFacing,
            local: cf_addr,
            remote: state.client_addr(),
            local_cid: issued(CidOwner::Server, server_cid),
            peer_cid: issued(CidOwner::Client, client_cid),
            version: state.quic_version,
            cipher_suite: state.cipher_suite,
            key_phase: state.key_phase,
            secrets: state.application_secrets(),
            local_params: server_params.clone(),
            peer_params: client_params.clone(),
            next_pn: next(pn.server_sent),
            largest_received: pn.server_received,
        };
        let sf = ResumeParams {
            role: Role::MiddleboxServerFacing,
            local: sf_addr,
            remote: state.server_addr(),
            local_cid: issued(CidOwner::Client, client_cid),
            peer_cid: issued(CidOwner::Server, server_cid),
            version: state.quic_version,
            cipher_suite: state.cipher_suite,
            key_phase: state.key_phase,
            secrets: state.application_secrets(),
            local_params: client_params,
            peer_params: server_params,
            next_pn: next(pn.client_sent),
            largest_received: pn.client_received,
        };
        let seed = self.seed ^ session;
        (
            Connection::resume(self.config.client_facing.clone(), cf, seed, now),
            Connection::resume(self.config.server_facing.clone(), sf, seed.rotate_left(17), now),
        )
    }

    fn downstream_failed(&mut self, now: Duration, id: u64, why: String) {
        let down = self.config.downstream.map(|d| d.oob);
        let s = self.sessions.get_mut(&id).unwrap();
        s.downstream = DownstreamState::Failed;
        s.sf.set_hold_streams(false);
        s.sf.start_probing(now);
        if let Some(peer) = down {
            self.oob.cancel_to(id, peer);
        }
        self.log(now, "downstream-failed", format!("{why}; probing {}", self.sessions[&id].sf.remote_addr()));
    }

    /// Drains facade events, splices stream data and retires finished sessions.
    fn process(&mut self, now: Duration) {
        let ids: Vec<u64> = self.sessions.keys().copied().collect();
        for id in ids {
            let mut log = Vec::new();
            let s = self.sessions.get_mut(&id).unwrap();
            while let Some(ev) = s.cf.poll_event() {
                match ev {
                    Event::PeerReached { addr } => {
                        s.cf_ready = true;
                        log.push(("client-reached", format!("session={id:016x} client={addr}")));
                    }
                    Event::Closed(reason) => {
                        log.push(("facade-closed", format!("cf {reason:?}")));
                        end_facade(&mut s.sf, s.sf_ready, close_code_of(&reason));
                    }
                    _ => {}
                }
            }
            while let Some(ev) = s.sf.poll_event() {
                match ev {
                    Event::PeerReached { addr } => {
                        s.sf_ready = true;
                        log.push(("server-reached", format!("session={id:016x} server={addr}")));
                    }
                    Event::PathMigrated { from, to } => {
                        if matches!(s.downstream, DownstreamState::Accepted { facade } if facade == to) {
                            s.sf_ready = true;
                            s.sf.set_hold_streams(false);
                            log.push(("downstream-reached", format!("session={id:016x} {from} -> {to}")));
                        }
                    }
                    Event::HandshakeDoneReceived => {
                        s.cf.queue_handshake_done();
                        log.push(("handshake-done-forwarded", format!("session={id:016x} to={}", s.cf.remote_addr())));
                    }
                    Event::Closed(reason) => {
                        log.push(("facade-closed", format!("sf {reason:?}")));
                        end_facade(&mut s.cf, s.cf_ready, close_code_of(&reason));
                    }
                    _ => {}
                }
            }
            let mut spliced = Vec::new();
            splice(&mut s.cf, &mut s.sf, &mut s.finished, true, &mut spliced);
            splice(&mut s.sf, &mut s.cf, &mut s.finished, false, &mut spliced);
            let buffered = s.cf.send_buffered() + s.sf.send_buffered();
            self.max_buffered = self.max_buffered.max(buffered);
            for chunk in spliced {
                if self.config.audit {
                    self.held.push(chunk);
                }
            }
            for (event, details) in log {
                self.log(now, event, details);
            }
        }
        self.retire(now);
    }

    /// Drops sessions whose facades are both closed and erases their state.
    fn retire(&mut self, now: Duration) {
        let done: Vec<u64> = self.sessions.iter().filter(|(_, s)| s.cf.is_closed() && s.sf.is_closed()).map(|(&id, _)| id).collect();
        for id in done {
            let reason = {
                let s = &self.sessions[&id];
                s.cf.close_reason().or(s.sf.close_reason()).cloned()
            };
            let mut s = self.sessions.remove(&id).unwrap();
            self.ports.retain(|_, (sid, _)| *sid != id);
            s.state.wipe();
            self.erased_states.push(s.state);
            self.oob.cancel(id);
            if let Some(r) = reason {
                if !self.outcomes.iter().any(|(sid, _)| *sid == id) {
                    self.outcomes.push((id, SessionOutcome::Closed(r)));
                }
            }
            self.log(now, "state-erased", format!("session={id:016x}"));
        }
    }
}

fn close_code_of(reason: &CloseReason) -> u64 {
    match reason {
        CloseReason::Local { code } | CloseReason::Remote { code } => *code,
        CloseReason::IdleTimeout => close_code::NO_ERROR,
    }
}

/// Closes a facade towards a peer it has reached; one that never reached its
/// peer is discarded silently so the end-to-end path is left undisturbed.
fn end_facade(conn: &mut Connection, reached: bool, code: u64) {
    if reached {
        conn.close(code);
    } else {
        conn.discard(code);
    }
}

/// Moves readable stream data from `from` to `to`, preserving stream ids and FIN.
fn splice(from: &mut Connection, to: &mut Connection, finished: &mut BTreeSet<(bool, u64)>, dir: bool, out: &mut Vec<Bytes>) {
    for id in from.take_readable() {
        to.ensure_stream(id);
        while let Some(chunk) = from.read(id) {
            out.push(chunk.clone());
            if to.write(id, chunk).is_err() {
                return;
            }
        }
        let complete = from.streams().recv_stream(id).is_some_and(|r| r.is_finished());
        if complete && finished.insert((dir, id)) {
            let _ = to.finish(id);
        }
    }
}
