use std::collections::VecDeque;
use std::time::Duration;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cid::{CidOwner, ConnectionId, IssuedCid};
use super::frame::{AckFrame, Frame, PATH_TOKEN_LEN};
use super::handshake::{finished_verify, shared_secret, Message, Transcript};
use super::packet::{seal_packet, DirectionalKeys, Header, PartialDecode, Space, PN_LEN};
use super::params::{self, TransportParameters};
use super::space::{PacketSpace, SentFrames, SentPacket};
use super::stream::{Dir, Streams};
use super::TransportError;
use crate::congestion::{CongestionConfig, Controller};
use crate::crypto::schedule::{header_protection_secret, initial_secrets};
use crate::crypto::{HandshakeSecrets, Secret, Side, CIPHER_SUITE_AES_128_GCM_SHA256, PACKET_TAG_LEN};
use crate::net::{Addr, Datagram, DatagramInfo, FrameKinds, MAX_DATAGRAM_SIZE};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(10);
pub const PATH_VALIDATION_ATTEMPTS: u8 = 3;

/// Error codes carried in CONNECTION_CLOSE.
pub mod close_code {
    pub const NO_ERROR: u64 = 0x00;
    pub const PROTOCOL_VIOLATION: u64 = 0x0a;
    pub const CRYPTO_ERROR: u64 = 0x0100;
    pub const MIGRATION_FAILED: u64 = 0x0f00;
    pub const HANDOVER_TIMEOUT: u64 = 0x0f01;
}

#[derive(Debug, Clone)]
pub struct ConnectionConfig {
    pub smaq: bool,
    pub version: u32,
    pub idle_timeout: Duration,
    pub max_ack_delay: Duration,
    /// Ack-eliciting packets received before an immediate ACK.
    pub ack_eliciting_threshold: u32,
    pub congestion: CongestionConfig,
}

impl Default for ConnectionConfig {
    fn default() -> Self {
        Self {
            smaq: false,
            version: super::packet::QUIC_VERSION_1,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            max_ack_delay: crate::congestion::DEFAULT_MAX_ACK_DELAY,
            ack_eliciting_threshold: 2,
            congestion: CongestionConfig::default(),
        }
    }
}

impl ConnectionConfig {
    pub fn transport_parameters(&self) -> TransportParameters {
        TransportParameters::new(self.idle_timeout, self.max_ack_delay, self.smaq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Client,
    Server,
    /// Middlebox half facing the client; behaves as the migrated server.
    MiddleboxClientFacing,
    /// Middlebox half facing the server; behaves as the migrated client.
    MiddleboxServerFacing,
}

impl Role {
    /// Key lane this role sends on.
    pub fn side(self) -> Side {
        match self {
            Role::Client | Role::MiddleboxServerFacing => Side::Client,
            Role::Server | Role::MiddleboxClientFacing => Side::Server,
        }
    }

    pub fn is_middlebox(self) -> bool {
        matches!(self, Role::MiddleboxClientFacing | Role::MiddleboxServerFacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HandshakeState {
    Start,
    InitialSent,
    KeysEstablished,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CloseReason {
    Local { code: u64 },
    Remote { code: u64 },
    IdleTimeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    KeysEstablished,
    HandshakeConfirmed,
    /// A HANDSHAKE_DONE frame arrived (including duplicates).
    HandshakeDoneReceived,
    PathMigrated { from: Addr, to: Addr },
    PathValidationStarted { addr: Addr },
    PathValidationFailed { addr: Addr },
    /// A packet from a new address did not move the path.
    MigrationIgnored { from: Addr, confirmed: bool },
    /// First authenticated packet from the probed peer.
    PeerReached { addr: Addr },
    DroppedStreamPacket { from: Addr, pn: u64 },
    Closed(CloseReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConnectionStats {
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub packets_received: u64,
    pub packets_lost: u64,
    pub duplicates: u64,
    pub undecryptable: u64,
    pub unknown_cid: u64,
    pub dropped_stream_packets: u64,
    pub probes_sent: u64,
}

/// Secrets and header-protection keys of the current 1-RTT phase, indexed by sender.
#[derive(Debug, Clone)]
pub struct ApplicationSecrets {
    pub client: Secret,
    pub server: Secret,
    pub client_hp: Secret,
    pub server_hp: Secret,
}

impl ApplicationSecrets {
    fn from_traffic(client: Secret, server: Secret) -> Self {
        Self {
            client_hp: header_protection_secret(&client, Side::Client),
            server_hp: header_protection_secret(&server, Side::Server),
            client,
            server,
        }
    }

    fn keys(&self, side: Side) -> DirectionalKeys {
        match side {
            Side::Client => DirectionalKeys::new(&self.client, &self.client_hp),
            Side::Server => DirectionalKeys::new(&self.server, &self.server_hp),
        }
    }

    pub fn wipe(&mut self) {
        for s in [&mut self.client, &mut self.server, &mut self.client_hp, &mut self.server_hp] {
            s.wipe();
        }
    }
}

/// Everything needed to resume a connection mid-flight without a handshake.
#[derive(Debug, Clone)]
pub struct ResumeParams {
    pub role: Role,
    pub local: Addr,
    pub remote: Addr,
    pub local_cid: IssuedCid,
    pub peer_cid: IssuedCid,
    pub version: u32,
    pub cipher_suite: u16,
    pub key_phase: u64,
    pub secrets: ApplicationSecrets,
    pub local_params: TransportParameters,
    pub peer_params: TransportParameters,
    /// First application packet number to send.
    pub next_pn: u64,
    /// Largest application packet number already received from the peer.
    pub largest_received: Option<u64>,
}

#[derive(Debug, Clone, Default)]
struct Pending {
    handshake_done: bool,
    handshake_done_acked: bool,
    ping: bool,
    path_responses: VecDeque<(Addr, [u8; PATH_TOKEN_LEN])>,
}

#[derive(Debug, Clone)]
struct PathValidation {
    addr: Addr,
    tokens: Vec<[u8; PATH_TOKEN_LEN]>,
    attempts: u8,
    send_now: bool,
    deadline: Duration,
}

#[derive(Debug, Clone)]
struct Probe {
    next: Duration,
}

#[derive(Debug, Clone)]
enum HandshakeDriver {
    Client { share: [u8; 32], transcript: Transcript, secrets: Option<HandshakeSecrets> },
    Server { transcript: Transcript, expected_finished: Option<[u8; 32]> },
    Done,
}

pub struct Connection {
    role: Role,
    config: ConnectionConfig,
    state: HandshakeState,
    closed: Option<CloseReason>,
    close_pending: Option<u64>,
    local: Addr,
    remote: Addr,
    local_cid: IssuedCid,
    peer_cid: IssuedCid,
    original_dcid: ConnectionId,
    version: u32,
    cipher_suite: u16,
    key_phase: u64,
    spaces: [PacketSpace; 3],
    app_secrets: Option<ApplicationSecrets>,
    exporter: Option<Secret>,
    handshake: HandshakeDriver,
    local_params: TransportParameters,
    peer_params: Option<TransportParameters>,
    streams: Streams,
    cc: Controller,
    epoch: u32,
    address_validated: bool,
    bytes_received: u64,
    bytes_sent_unvalidated: u64,
    pending: Pending,
    validation: Option<PathValidation>,
    expected_peer: Option<Addr>,
    drop_stream_from: Option<Addr>,
    probe: Option<Probe>,
    hold_streams: bool,
    idle_deadline: Duration,
    pacing_wake: Option<Duration>,
    events: VecDeque<Event>,
    rng: ChaCha8Rng,
    stats: ConnectionStats,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("role", &self.role)
            .field("state", &self.state)
            .field("local", &self.local)
            .field("remote", &self.remote)
            .field("closed", &self.closed)
            .finish_non_exhaustive()
    }
}

fn random_cid(rng: &mut ChaCha8Rng, owner: CidOwner) -> IssuedCid {
    let mut reset_token = [0u8; 16];
    let cid = ConnectionId::random(rng);
    rng.fill(&mut reset_token);
    IssuedCid { owner, cid, sequence: 0, reset_token }
}

impl Connection {
    fn base(
        role: Role,
        config: ConnectionConfig,
        local: Addr,
        remote: Addr,
        local_cid: IssuedCid,
        peer_cid: IssuedCid,
        original_dcid: ConnectionId,
        rng: ChaCha8Rng,
        now: Duration,
    ) -> Self {
        let side = role.side();
        let idle = config.idle_timeout;
        Self {
            role,
            state: HandshakeState::Start,
            closed: None,
            close_pending: None,
            local,
            remote,
            local_cid,
            peer_cid,
            original_dcid,
            version: config.version,
            cipher_suite: CIPHER_SUITE_AES_128_GCM_SHA256,
            key_phase: 0,
            spaces: Default::default(),
            app_secrets: None,
            exporter: None,
            handshake: HandshakeDriver::Done,
            local_params: config.transport_parameters(),
            peer_params: None,
            streams: Streams::new(side),
            cc: Controller::new(config.congestion.clone()),
            epoch: 0,
            address_validated: role != Role::Server,
            bytes_received: 0,
            bytes_sent_unvalidated: 0,
            pending: Pending::default(),
            validation: None,
            expected_peer: None,
            drop_stream_from: None,
            probe: None,
            hold_streams: false,
            idle_deadline: now + idle,
            pacing_wake: None,
            events: VecDeque::new(),
            rng,
            stats: ConnectionStats::default(),
            config,
        }
    }

    /// Starts a client connection and queues the ClientHello.
    pub fn connect(config: ConnectionConfig, local: Addr, remote: Addr, seed: u64, now: Duration) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let odcid = ConnectionId::random(&mut rng);
        let local_cid = random_cid(&mut rng, CidOwner::Client);
        let placeholder = IssuedCid { owner: CidOwner::Server, cid: odcid, sequence: 0, reset_token: [0; 16] };
        let random: [u8; 32] = rng.gen();
        let share: [u8; 32] = rng.gen();
        let mut conn = Self::base(Role::Client, config, local, remote, local_cid, placeholder, odcid, rng, now);
        let (client, server) = initial_secrets(odcid.as_bytes());
        conn.install_initial(&client, &server);
        let hello = Message::ClientHello { random, share, params: conn.local_params.clone() }.encode();
        let mut transcript = Transcript::default();
        transcript.update(&hello);
        conn.spaces[0].crypto_send.write(Bytes::from(hello));
        conn.handshake = HandshakeDriver::Client { share, transcript, secrets: None };
        conn.state = HandshakeState::InitialSent;
        conn
    }

    /// Accepts a connection from the client's first Initial datagram.
    pub fn accept(
        config: ConnectionConfig,
        local: Addr,
        first: Datagram,
        seed: u64,
        now: Duration,
    ) -> Result<Self, TransportError> {
        let partial = PartialDecode::parse(&first.payload)?;
        let header = partial.header;
        if header.space != Space::Initial {
            return Err(TransportError::InvalidHeader);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local_cid = random_cid(&mut rng, CidOwner::Server);
        let peer = header.scid.ok_or(TransportError::InvalidHeader)?;
        let peer_cid = IssuedCid { owner: CidOwner::Client, cid: peer, sequence: 0, reset_token: [0; 16] };
        let mut conn = Self::base(Role::Server, config, local, first.src, local_cid, peer_cid, header.dcid, rng, now);
        conn.local_params.set(params::id::STATELESS_RESET_TOKEN, local_cid.reset_token.to_vec());
        let (client, server) = initial_secrets(header.dcid.as_bytes());
        conn.install_initial(&server, &client);
        conn.handshake = HandshakeDriver::Server { transcript: Transcript::default(), expected_finished: None };
        conn.handle_datagram(now, first);
        Ok(conn)
    }

    /// Resumes a connection from handed-over state. The result is confirmed
    /// and only has 1-RTT keys.
    pub fn resume(config: ConnectionConfig, params: ResumeParams, seed: u64, now: Duration) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conn = Self::base(
            params.role,
            config,
            params.local,
            params.remote,
            params.local_cid,
            params.peer_cid,
            params.local_cid.cid,
            rng,
            now,
        );
        let side = params.role.side();
        conn.version = params.version;
        conn.cipher_suite = params.cipher_suite;
        conn.key_phase = params.key_phase;
        conn.local_params = params.local_params;
        conn.peer_params = Some(params.peer_params);
        for s in &mut conn.spaces[..2] {
            s.discarded = true;
        }
        let app = &mut conn.spaces[2];
        app.local_keys = Some(params.secrets.keys(side));
        app.remote_keys = Some(params.secrets.keys(side.peer()));
        app.next_pn = params.next_pn;
        app.largest_received = params.largest_received;
        if let Some(l) = params.largest_received {
            app.received.insert_one(l);
        }
        conn.app_secrets = Some(params.secrets);
        conn.state = HandshakeState::Confirmed;
        conn.address_validated = true;
        conn
    }

    fn install_initial(&mut self, local: &Secret, remote: &Secret) {
        let side = self.role.side();
        self.spaces[0].local_keys = Some(DirectionalKeys::from_traffic(local, side));
        self.spaces[0].remote_keys = Some(DirectionalKeys::from_traffic(remote, side.peer()));
    }

    // ----- accessors -------------------------------------------------------

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn side(&self) -> Side {
        self.role.side()
    }

    pub fn state(&self) -> HandshakeState {
        self.state
    }

    pub fn is_confirmed(&self) -> bool {
        self.state == HandshakeState::Confirmed
    }

    pub fn keys_established(&self) -> bool {
        self.state >= HandshakeState::KeysEstablished
    }

    pub fn is_closed(&self) -> bool {
        self.closed.is_some()
    }

    pub fn close_reason(&self) -> Option<&CloseReason> {
        self.closed.as_ref()
    }

    pub fn local_addr(&self) -> Addr {
        self.local
    }

    pub fn remote_addr(&self) -> Addr {
        self.remote
    }

    pub fn local_cid(&self) -> &IssuedCid {
        &self.local_cid
    }

    pub fn peer_cid(&self) -> &IssuedCid {
        &self.peer_cid
    }

    /// The destination CID of the client's first Initial.
    pub fn original_dcid(&self) -> ConnectionId {
        self.original_dcid
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn cipher_suite(&self) -> u16 {
        self.cipher_suite
    }

    pub fn key_phase(&self) -> u64 {
        self.key_phase
    }

    pub fn application_secrets(&self) -> Option<&ApplicationSecrets> {
        self.app_secrets.as_ref()
    }

    /// Exporter master secret; only endpoints that ran the handshake have it.
    pub fn exporter_secret(&self) -> Option<&Secret> {
        self.exporter.as_ref()
    }

    pub fn local_params(&self) -> &TransportParameters {
        &self.local_params
    }

    pub fn peer_params(&self) -> Option<&TransportParameters> {
        self.peer_params.as_ref()
    }

    /// Both sides advertised handover support.
    pub fn smaq_negotiated(&self) -> bool {
        self.local_params.smaq() && self.peer_params.as_ref().is_some_and(TransportParameters::smaq)
    }

    /// Highest application packet number sent so far.
    pub fn highest_sent(&self) -> Option<u64> {
        self.spaces[2].next_pn.checked_sub(1)
    }

    pub fn highest_received(&self) -> Option<u64> {
        self.spaces[2].largest_received
    }

    pub fn next_pn(&self, space: Space) -> u64 {
        self.spaces[space.index()].next_pn
    }

    pub fn congestion(&self) -> &Controller {
        &self.cc
    }

    pub fn stats(&self) -> &ConnectionStats {
        &self.stats
    }

    pub fn config(&self) -> &ConnectionConfig {
        &self.config
    }

    pub fn poll_event(&mut self) -> Option<Event> {
        self.events.pop_front()
    }

    pub fn path_validation_in_progress(&self) -> bool {
        self.validation.is_some()
    }

    // ----- migration policy --------------------------------------------------

    /// Accept an unvalidated path change to `addr` once confirmed.
    pub fn expect_peer_migration(&mut self, addr: Option<Addr>) {
        self.expected_peer = addr;
    }

    /// Drop whole packets from `addr` that carry STREAM frames, without acknowledging them.
    pub fn drop_stream_packets_from(&mut self, addr: Option<Addr>) {
        self.drop_stream_from = addr;
    }

    /// Sends a PING to the current remote now and again every PTO until it
    /// answers. Stream data is held meanwhile.
    pub fn start_probing(&mut self, now: Duration) {
        self.pending.ping = true;
        self.probe = Some(Probe { next: now + self.cc.pto(false) });
    }

    /// Like [`start_probing`](Self::start_probing), but the first PING waits
    /// until `at`. Stream data is held from now on.
    pub fn start_probing_at(&mut self, now: Duration, at: Duration) {
        if at <= now {
            self.start_probing(now);
        } else {
            self.probe = Some(Probe { next: at });
        }
    }

    /// Keeps stream data queued without sending it. Control frames still flow.
    pub fn set_hold_streams(&mut self, hold: bool) {
        self.hold_streams = hold;
    }

    pub fn holds_streams(&self) -> bool {
        self.hold_streams || self.probe.is_some()
    }

    pub fn stop_probing(&mut self) {
        self.probe = None;
    }

    pub fn is_probing(&self) -> bool {
        self.probe.is_some()
    }

    /// Points the connection at a new remote without validation and resets
    /// congestion state. Used when a middlebox takes over a path.
    pub fn set_remote(&mut self, addr: Addr, now: Duration) {
        if addr != self.remote {
            self.change_path(addr, now);
        }
    }

    pub fn queue_handshake_done(&mut self) {
        self.pending.handshake_done = true;
        self.pending.handshake_done_acked = false;
    }

    // ----- streams -----------------------------------------------------------

    pub fn open_stream(&mut self, dir: Dir) -> u64 {
        self.streams.open(dir)
    }

    pub fn ensure_stream(&mut self, id: u64) {
        self.streams.ensure(id);
    }

    pub fn write(&mut self, id: u64, data: Bytes) -> Result<(), TransportError> {
        if self.closed.is_some() {
            return Err(TransportError::Closed);
        }
        self.streams.write(id, data)
    }

    pub fn finish(&mut self, id: u64) -> Result<(), TransportError> {
        self.streams.finish(id)
    }

    pub fn read(&mut self, id: u64) -> Option<Bytes> {
        self.streams.read(id)
    }

    pub fn take_readable(&mut self) -> Vec<u64> {
        self.streams.take_readable()
    }

    pub fn streams(&self) -> &Streams {
        &self.streams
    }

    /// Bytes written but not yet acknowledged, across all streams.
    pub fn send_buffered(&self) -> u64 {
        self.streams.buffered()
    }

    // ----- close -------------------------------------------------------------

    /// Sends CONNECTION_CLOSE on the next transmit, then stops.
    pub fn close(&mut self, code: u64) {
        if self.closed.is_none() && self.close_pending.is_none() {
            self.close_pending = Some(code);
        }
    }

    /// Closes without telling the peer. For facades that never reached theirs.
    pub fn discard(&mut self, code: u64) {
        self.close_pending = None;
        self.set_closed(CloseReason::Local { code });
    }

    fn set_closed(&mut self, reason: CloseReason) {
        if self.closed.is_none() {
            self.closed = Some(reason.clone());
            self.probe = None;
            self.validation = None;
            self.events.push_back(Event::Closed(reason));
        }
    }

    // ----- receive -------------------------------------------------------------

    pub fn handle_datagram(&mut self, now: Duration, dgram: Datagram) {
        if self.closed.is_some() {
            return;
        }
        let partial = match PartialDecode::parse(&dgram.payload) {
            Ok(p) => p,
            Err(_) => {
                self.stats.undecryptable += 1;
                return;
            }
        };
        let header = partial.header;
        let known = header.dcid == self.local_cid.cid
            || (self.role == Role::Server && header.space == Space::Initial && header.dcid == self.original_dcid);
        if !known {
            self.stats.unknown_cid += 1;
            return;
        }
        let idx = header.space.index();
        let Some(keys) = self.spaces[idx].remote_keys.clone().filter(|_| !self.spaces[idx].discarded) else {
            self.stats.undecryptable += 1;
            return;
        };
        let len = dgram.payload.len() as u64;
        let largest = self.spaces[idx].largest_received;
        let (pn, payload) = match partial.open(dgram.payload, &keys, largest) {
            Ok(v) => v,
            Err(_) => {
                self.stats.undecryptable += 1;
                return;
            }
        };
        if !self.address_validated {
            self.bytes_received += len;
        }
        if self.spaces[idx].is_duplicate(pn) {
            self.stats.duplicates += 1;
            self.spaces[idx].ack_immediately = true;
            return;
        }
        let frames = match Frame::decode_all(&Bytes::from(payload)) {
            Ok(f) => f,
            Err(_) => {
                self.close(close_code::PROTOCOL_VIOLATION);
                return;
            }
        };
        let src = dgram.src;
        if self.drop_stream_from == Some(src) && frames.iter().any(|f| matches!(f, Frame::Stream(_))) {
            self.stats.dropped_stream_packets += 1;
            self.events.push_back(Event::DroppedStreamPacket { from: src, pn });
            return;
        }
        self.stats.packets_received += 1;
        if self.role == Role::Client && header.space == Space::Initial {
            if let Some(scid) = header.scid {
                self.peer_cid.cid = scid;
            }
        }
        if self.role == Role::Server && header.space == Space::Handshake && !self.address_validated {
            self.address_validated = true;
        }
        if self.role == Role::Server && header.space == Space::Handshake && !self.spaces[0].discarded {
            self.discard_space(Space::Initial);
        }

        let is_largest = self.spaces[idx].on_received(pn, now);
        let ack_eliciting = frames.iter().any(Frame::is_ack_eliciting);
        let probing_only = frames.iter().all(Frame::is_probing);
        self.idle_deadline = now + self.idle_timeout();

        if self.probe.is_some() && src == self.remote {
            self.probe = None;
            self.cc.on_migration_complete();
            self.events.push_back(Event::PeerReached { addr: src });
        }

        for frame in frames {
            if self.closed.is_some() {
                return;
            }
            self.on_frame(now, header.space, src, frame);
        }

        if ack_eliciting {
            let s = &mut self.spaces[idx];
            s.unacked_eliciting += 1;
            if header.space != Space::Application
                || s.unacked_eliciting >= self.config.ack_eliciting_threshold
                || !is_largest
            {
                s.ack_immediately = true;
            } else if s.ack_deadline.is_none() {
                s.ack_deadline = Some(now + self.config.max_ack_delay);
            }
        }

        if header.space == Space::Application && src != self.remote && !probing_only && is_largest {
            self.on_peer_address_change(now, src);
        }
    }

    fn idle_timeout(&self) -> Duration {
        let local = self.config.idle_timeout;
        self.peer_params
            .as_ref()
            .and_then(TransportParameters::idle_timeout)
            .filter(|d| !d.is_zero())
            .map_or(local, |peer| peer.min(local))
    }

    fn on_peer_address_change(&mut self, now: Duration, src: Addr) {
        if !self.is_confirmed() {
            self.events.push_back(Event::MigrationIgnored { from: src, confirmed: false });
            return;
        }
        match self.role {
            Role::Server | Role::MiddleboxClientFacing => {
                if self.validation.as_ref().is_some_and(|v| v.addr == src) {
                    return;
                }
                self.validation = Some(PathValidation {
                    addr: src,
                    tokens: Vec::new(),
                    attempts: 0,
                    send_now: true,
                    deadline: now,
                });
                self.events.push_back(Event::PathValidationStarted { addr: src });
            }
            Role::Client | Role::MiddleboxServerFacing => {
                if self.expected_peer == Some(src) {
                    self.change_path(src, now);
                    self.spaces[2].ack_immediately = true;
                } else {
                    self.events.push_back(Event::MigrationIgnored { from: src, confirmed: true });
                }
            }
        }
    }

    fn change_path(&mut self, to: Addr, now: Duration) {
        let from = self.remote;
        self.remote = to;
        self.epoch += 1;
        self.cc.reset_for_new_path(now);
        self.cc.on_migration_complete();
        // Outstanding data is resent on the new path once declared lost; the
        // new controller does not count it in flight.
        self.events.push_back(Event::PathMigrated { from, to });
    }

    fn on_frame(&mut self, now: Duration, space: Space, src: Addr, frame: Frame) {
        match frame {
            Frame::Padding(_) | Frame::Ping => {}
            Frame::Ack(ack) => self.on_ack(now, space, &ack),
            Frame::Crypto { offset, data } => {
                let s = &mut self.spaces[space.index()];
                if s.crypto_recv.insert(offset, data, false).is_err() {
                    self.close(close_code::PROTOCOL_VIOLATION);
                    return;
                }
                while let Some(chunk) = s.crypto_recv.read() {
                    s.crypto_buffer.extend_from_slice(&chunk);
                }
                self.process_crypto(now, space);
            }
            Frame::Stream(f) => {
                if space != Space::Application || self.streams.on_frame(f).is_err() {
                    self.close(close_code::PROTOCOL_VIOLATION);
                }
            }
            Frame::HandshakeDone => {
                if matches!(self.role, Role::Server | Role::MiddleboxClientFacing) {
                    self.close(close_code::PROTOCOL_VIOLATION);
                    return;
                }
                self.events.push_back(Event::HandshakeDoneReceived);
                if self.role == Role::Client && self.state == HandshakeState::KeysEstablished {
                    self.state = HandshakeState::Confirmed;
                    self.discard_space(Space::Handshake);
                    self.events.push_back(Event::HandshakeConfirmed);
                }
            }
            Frame::PathChallenge(token) => self.pending.path_responses.push_back((src, token)),
            Frame::PathResponse(token) => {
                let matched = self
                    .validation
                    .as_ref()
                    .is_some_and(|v| v.addr == src && v.tokens.contains(&token));
                if matched {
                    self.validation = None;
                    self.change_path(src, now);
                }
            }
            Frame::ConnectionClose { code, .. } => self.set_closed(CloseReason::Remote { code }),
        }
    }

    fn process_crypto(&mut self, now: Duration, space: Space) {
        loop {
            let buf = &self.spaces[space.index()].crypto_buffer;
            let parsed = match Message::parse(buf) {
                Ok(Some(p)) => p,
                Ok(None) => return,
                Err(_) => {
                    self.close(close_code::PROTOCOL_VIOLATION);
                    return;
                }
            };
            let (msg, used) = parsed;
            let raw: Vec<u8> = self.spaces[space.index()].crypto_buffer.drain(..used).collect();
            if let Err(code) = self.on_handshake_message(now, space, msg, &raw) {
                self.close(code);
                return;
            }
        }
    }

    fn on_handshake_message(&mut self, _now: Duration, space: Space, msg: Message, raw: &[u8]) -> Result<(), u64> {
        let side = self.role.side();
        match (&mut self.handshake, space, msg) {
            (HandshakeDriver::Server { transcript, expected_finished }, Space::Initial, Message::ClientHello { share: client_share, params, .. }) => {
                if expected_finished.is_some() {
                    return Ok(());
                }
                transcript.update(raw);
                let random: [u8; 32] = self.rng.gen();
                let share: [u8; 32] = self.rng.gen();
                let sh = Message::ServerHello { random, share }.encode();
                transcript.update(&sh);
                let hs = HandshakeSecrets::derive(&shared_secret(&client_share, &share), &transcript.hash());
                let ee = Message::EncryptedExtensions { params: self.local_params.clone() }.encode();
                transcript.update(&ee);
                let fin = Message::Finished { verify: finished_verify(&hs.server, &transcript.hash()) }.encode();
                transcript.update(&fin);
                let through_fin = transcript.hash();
                *expected_finished = Some(finished_verify(&hs.client, &through_fin));
                let (client_app, server_app, exporter) = hs.application(&through_fin);
                self.peer_params = Some(params);
                self.spaces[0].crypto_send.write(Bytes::from(sh));
                let hsp = &mut self.spaces[1];
                hsp.local_keys = Some(DirectionalKeys::from_traffic(&hs.server, side));
                hsp.remote_keys = Some(DirectionalKeys::from_traffic(&hs.client, side.peer()));
                hsp.crypto_send.write(Bytes::from([ee, fin].concat()));
                self.install_application(client_app, server_app, exporter);
                self.state = HandshakeState::KeysEstablished;
                self.events.push_back(Event::KeysEstablished);
                Ok(())
            }
            (HandshakeDriver::Server { expected_finished, .. }, Space::Handshake, Message::Finished { verify }) => {
                if Some(verify) != *expected_finished {
                    return Err(close_code::CRYPTO_ERROR);
                }
                self.handshake = HandshakeDriver::Done;
                self.state = HandshakeState::Confirmed;
                self.discard_space(Space::Handshake);
                self.pending.handshake_done = true;
                self.events.push_back(Event::HandshakeConfirmed);
                Ok(())
            }
            (HandshakeDriver::Client { share, transcript, secrets, .. }, Space::Initial, Message::ServerHello { share: server_share, .. }) => {
                if secrets.is_some() {
                    return Ok(());
                }
                transcript.update(raw);
                let hs = HandshakeSecrets::derive(&shared_secret(share, &server_share), &transcript.hash());
                let hsp = &mut self.spaces[1];
                hsp.local_keys = Some(DirectionalKeys::from_traffic(&hs.client, side));
                hsp.remote_keys = Some(DirectionalKeys::from_traffic(&hs.server, side.peer()));
                *secrets = Some(hs);
                Ok(())
            }
            (HandshakeDriver::Client { transcript, .. }, Space::Handshake, Message::EncryptedExtensions { params }) => {
                transcript.update(raw);
                if let Some(token) = params.stateless_reset_token() {
                    self.peer_cid.reset_token = token;
                }
                self.peer_params = Some(params);
                Ok(())
            }
            (HandshakeDriver::Client { transcript, secrets: Some(hs), .. }, Space::Handshake, Message::Finished { verify }) => {
                if verify != finished_verify(&hs.server, &transcript.hash()) {
                    return Err(close_code::CRYPTO_ERROR);
                }
                transcript.update(raw);
                let through_fin = transcript.hash();
                let fin = Message::Finished { verify: finished_verify(&hs.client, &through_fin) }.encode();
                let (client_app, server_app, exporter) = hs.application(&through_fin);
                self.spaces[1].crypto_send.write(Bytes::from(fin));
                self.install_application(client_app, server_app, exporter);
                self.handshake = HandshakeDriver::Done;
                self.state = HandshakeState::KeysEstablished;
                self.events.push_back(Event::KeysEstablished);
                Ok(())
            }
            _ => Err(close_code::PROTOCOL_VIOLATION),
        }
    }

    fn install_application(&mut self, client: Secret, server: Secret, exporter: Secret) {
        let side = self.role.side();
        let secrets = ApplicationSecrets::from_traffic(client, server);
        self.spaces[2].local_keys = Some(secrets.keys(side));
        self.spaces[2].remote_keys = Some(secrets.keys(side.peer()));
        self.app_secrets = Some(secrets);
        self.exporter = Some(exporter);
    }

    fn discard_space(&mut self, space: Space) {
        let s = &mut self.spaces[space.index()];
        if s.discarded {
            return;
        }
        s.discarded = true;
        s.local_keys = None;
        s.remote_keys = None;
        s.loss_time = None;
        s.probes = 0;
        s.ack_immediately = false;
        s.ack_deadline = None;
        let sent = std::mem::take(&mut s.sent);
        for p in sent.values() {
            if p.epoch == self.epoch {
                self.cc.on_packet_discarded(p.size);
            }
        }
    }

    // ----- acknowledgements and loss -----------------------------------------

    fn on_ack(&mut self, now: Duration, space: Space, ack: &AckFrame) {
        let idx = space.index();
        let mut newly = Vec::new();
        for r in &ack.ranges {
            let s = &self.spaces[idx];
            newly.extend(s.sent.range(r.clone()).map(|(&pn, _)| pn));
        }
        if newly.is_empty() {
            return;
        }
        let largest_newly = *newly.iter().max().unwrap();
        let s = &mut self.spaces[idx];
        s.largest_acked = Some(s.largest_acked.map_or(largest_newly, |l| l.max(largest_newly)));
        let mut acked_bytes = 0;
        let mut largest_sent_time = Duration::ZERO;
        let mut rtt_sample = None;
        for pn in newly {
            let p = self.spaces[idx].sent.remove(&pn).unwrap();
            if pn == ack.largest() && p.epoch == self.epoch {
                rtt_sample = Some((now - p.time_sent, p.time_sent));
            }
            if p.epoch == self.epoch {
                acked_bytes += p.size;
                largest_sent_time = largest_sent_time.max(p.time_sent);
            }
            self.on_frames_acked(space, p.frames);
        }
        if let Some((sample, sent)) = rtt_sample {
            let delay = if space == Space::Application {
                Duration::from_micros(ack.delay_micros)
            } else {
                Duration::ZERO
            };
            self.cc.on_rtt_sample(sample, delay, sent);
        }
        if acked_bytes > 0 {
            self.cc.on_ack(acked_bytes, largest_sent_time, now);
        } else {
            self.cc.reset_pto_count();
        }
        self.detect_lost(now, space);
    }

    fn on_frames_acked(&mut self, space: Space, frames: SentFrames) {
        for (id, range, fin) in frames.stream {
            self.streams.on_acked(id, range, fin);
        }
        for range in frames.crypto {
            self.spaces[space.index()].crypto_send.on_ack(range);
        }
        if frames.handshake_done {
            self.pending.handshake_done_acked = true;
            self.pending.handshake_done = false;
        }
    }

    fn on_frames_lost(&mut self, space: Space, frames: SentFrames) {
        for (id, range, fin) in frames.stream {
            self.streams.on_lost(id, range, fin);
        }
        for range in frames.crypto {
            self.spaces[space.index()].crypto_send.on_lost(range);
        }
        if frames.handshake_done && !self.pending.handshake_done_acked {
            self.pending.handshake_done = true;
        }
    }

    fn detect_lost(&mut self, now: Duration, space: Space) {
        let idx = space.index();
        let loss_delay = self.cc.rtt().loss_delay();
        let s = &mut self.spaces[idx];
        let Some(largest_acked) = s.largest_acked else { return };
        s.loss_time = None;
        let mut lost = Vec::new();
        for (&pn, p) in s.sent.range(..largest_acked) {
            if p.time_sent + loss_delay <= now || largest_acked >= pn + 3 {
                lost.push(pn);
            } else {
                let t = p.time_sent + loss_delay;
                s.loss_time = Some(s.loss_time.map_or(t, |l| l.min(t)));
            }
        }
        let mut lost_bytes = 0;
        let mut largest_lost_time = Duration::ZERO;
        for pn in lost {
            let p = self.spaces[idx].sent.remove(&pn).unwrap();
            self.stats.packets_lost += 1;
            if p.epoch == self.epoch {
                lost_bytes += p.size;
                largest_lost_time = largest_lost_time.max(p.time_sent);
            }
            self.on_frames_lost(space, p.frames);
        }
        if lost_bytes > 0 {
            self.cc.on_loss(lost_bytes, largest_lost_time, now);
        }
    }

    fn pto_deadline(&self) -> Option<(Duration, Space)> {
        let mut best: Option<(Duration, Space)> = None;
        for space in Space::ALL {
            let s = &self.spaces[space.index()];
            if s.discarded || !s.ack_eliciting_in_flight() {
                continue;
            }
            if space == Space::Application && !self.is_confirmed() {
                continue;
            }
            let Some(last) = s.last_ack_eliciting else { continue };
            let t = self.cc.retransmission_timer(last, space == Space::Application);
            if best.is_none_or(|(b, _)| t < b) {
                best = Some((t, space));
            }
        }
        best
    }

    fn loss_timer(&self) -> Option<(Duration, Space, bool)> {
        let earliest_loss = Space::ALL
            .iter()
            .filter_map(|&sp| self.spaces[sp.index()].loss_time.map(|t| (t, sp)))
            .min();
        if let Some((t, sp)) = earliest_loss {
            return Some((t, sp, true));
        }
        self.pto_deadline().map(|(t, sp)| (t, sp, false))
    }

    // ----- timers ------------------------------------------------------------

    pub fn poll_timeout(&self) -> Option<Duration> {
        if self.closed.is_some() {
            return None;
        }
        let mut t = Some(self.idle_deadline);
        let mut consider = |c: Option<Duration>| {
            if let Some(c) = c {
                t = Some(t.map_or(c, |x: Duration| x.min(c)));
            }
        };
        consider(self.loss_timer().map(|(t, _, _)| t));
        for s in &self.spaces {
            consider(s.ack_deadline);
        }
        consider(self.pacing_wake);
        consider(self.validation.as_ref().map(|v| v.deadline));
        consider(self.probe.as_ref().map(|p| p.next));
        t
    }

    pub fn handle_timeout(&mut self, now: Duration) {
        if self.closed.is_some() {
            return;
        }
        if now >= self.idle_deadline {
            self.set_closed(CloseReason::IdleTimeout);
            return;
        }
        if self.pacing_wake.is_some_and(|w| w <= now) {
            self.pacing_wake = None;
        }
        if let Some((t, space, is_loss)) = self.loss_timer() {
            if t <= now {
                if is_loss {
                    self.detect_lost(now, space);
                } else {
                    self.on_pto(now, space);
                }
            }
        }
        let attempts = PATH_VALIDATION_ATTEMPTS;
        let pto = self.cc.pto(false);
        if let Some(v) = &mut self.validation {
            if v.deadline <= now {
                if v.attempts >= attempts {
                    let addr = v.addr;
                    self.validation = None;
                    self.events.push_back(Event::PathValidationFailed { addr });
                } else {
                    v.send_now = true;
                    // Re-armed when the challenge is actually sent.
                    v.deadline = now + pto;
                }
            }
        }
        if let Some(p) = &mut self.probe {
            if p.next <= now {
                self.pending.ping = true;
                p.next = now + self.cc.pto(false);
            }
        }
    }

    fn on_pto(&mut self, now: Duration, space: Space) {
        self.cc.on_pto_expired();
        let s = &mut self.spaces[space.index()];
        s.probes = s.probes.max(1);
        // Keep the deadline moving even if the probe cannot leave immediately.
        s.last_ack_eliciting = Some(now);
        if let Some(frames) = s.oldest_unacked().cloned() {
            self.on_frames_lost(space, frames);
        }
    }

    // ----- transmit ----------------------------------------------------------

    fn amplification_allowance(&self) -> u64 {
        if self.address_validated {
            u64::MAX
        } else {
            (3 * self.bytes_received).saturating_sub(self.bytes_sent_unvalidated)
        }
    }

    fn header_for(&self, space: Space) -> Header {
        Header {
            space,
            version: self.version,
            dcid: self.peer_cid.cid,
            scid: (space != Space::Application).then_some(self.local_cid.cid),
            key_phase: self.key_phase & 1 == 1,
        }
    }

    pub fn poll_transmit(&mut self, now: Duration) -> Option<Datagram> {
        if self.closed.is_some() {
            return None;
        }
        if let Some(code) = self.close_pending.take() {
            let d = self.build_close(code);
            self.set_closed(CloseReason::Local { code });
            return d;
        }
        if self.spaces[2].has_keys() {
            if let Some((addr, token)) = self.pending.path_responses.pop_front() {
                return self.build_single(now, addr, vec![Frame::PathResponse(token)]);
            }
            if self.validation.as_ref().is_some_and(|v| v.send_now) {
                let token: [u8; PATH_TOKEN_LEN] = self.rng.gen();
                let pto = self.cc.pto(false);
                let v = self.validation.as_mut().unwrap();
                v.send_now = false;
                v.attempts += 1;
                v.tokens.push(token);
                v.deadline = now + pto;
                let addr = v.addr;
                return self.build_single(now, addr, vec![Frame::PathChallenge(token)]);
            }
            if self.probe.is_some() && self.pending.ping {
                self.pending.ping = false;
                self.stats.probes_sent += 1;
                let remote = self.remote;
                return self.build_single(now, remote, vec![Frame::Ping]);
            }
        }
        for space in Space::ALL {
            if !self.spaces[space.index()].has_keys() {
                continue;
            }
            if let Some(d) = self.build(now, space) {
                return Some(d);
            }
        }
        None
    }

    fn build_close(&mut self, code: u64) -> Option<Datagram> {
        let space = Space::ALL.into_iter().rev().find(|&sp| self.spaces[sp.index()].has_keys())?;
        let frame = Frame::ConnectionClose { code, reason: Bytes::new() };
        let remote = self.remote;
        self.emit(space, remote, vec![frame], false, Duration::ZERO, SentFrames::default(), 0)
    }

    /// A packet outside congestion control carrying only `frames`. Probe PINGs
    /// to the active path also carry a pending ACK; path validation packets
    /// stay probing-only.
    fn build_single(&mut self, now: Duration, to: Addr, mut frames: Vec<Frame>) -> Option<Datagram> {
        let probing = frames.iter().all(Frame::is_probing);
        if !probing && to == self.remote && self.spaces[2].ack_pending() {
            frames.insert(0, Frame::Ack(self.ack_frame(now, Space::Application)));
            self.spaces[2].on_ack_sent();
        }
        self.emit(Space::Application, to, frames, false, now, SentFrames::default(), 0)
    }

    fn ack_frame(&self, now: Duration, space: Space) -> AckFrame {
        let s = &self.spaces[space.index()];
        let delay = if space == Space::Application {
            now.saturating_sub(s.largest_received_time).as_micros() as u64
        } else {
            0
        };
        AckFrame { delay_micros: delay, ranges: s.ack_ranges() }
    }

    fn build(&mut self, now: Duration, space: Space) -> Option<Datagram> {
        let idx = space.index();
        let app = space == Space::Application;
        let s = &self.spaces[idx];
        let ack = s.ack_due(now) && !s.received.is_empty();
        let probe = s.probes > 0;
        let mut wants_data = s.crypto_send.has_pending();
        if app {
            let hold_streams = self.holds_streams();
            wants_data |= self.pending.handshake_done
                || (self.pending.ping && self.probe.is_none())
                || (!hold_streams && self.streams.has_pending());
        }
        if !ack && !wants_data && !probe {
            return None;
        }
        let full = MAX_DATAGRAM_SIZE as u64;
        if wants_data && !probe {
            let cwnd_ok = self.cc.available() >= full;
            let paced = self.cc.pacing_delay(now, full);
            if !cwnd_ok {
                wants_data = false;
            } else if let Some(wake) = paced {
                self.pacing_wake = Some(wake);
                wants_data = false;
            }
        }
        if self.amplification_allowance() < full && (wants_data || probe) {
            wants_data = false;
            if !ack {
                return None;
            }
        }
        if !ack && !wants_data && !probe {
            return None;
        }
        let send_data = wants_data || probe;

        let header = self.header_for(space);
        let budget = MAX_DATAGRAM_SIZE - header.encoded_len() - PACKET_TAG_LEN;
        let mut frames = Vec::new();
        let mut used = 0;
        let mut sent_frames = SentFrames::default();
        if self.spaces[idx].ack_pending() && !self.spaces[idx].received.is_empty() {
            let f = Frame::Ack(self.ack_frame(now, space));
            used += f.encoded_len();
            frames.push(f);
            self.spaces[idx].on_ack_sent();
        }
        if send_data {
            // CRYPTO first; then control frames; then stream data.
            loop {
                let s = &mut self.spaces[idx];
                let Some(off) = s.crypto_send.next_offset() else { break };
                let overhead = 1 + 8 + 2;
                if budget <= used + overhead {
                    break;
                }
                let _ = off;
                let Some((offset, data)) = s.crypto_send.take((budget - used - overhead) as u64) else { break };
                sent_frames.crypto.push(offset..offset + data.len() as u64);
                let f = Frame::Crypto { offset, data };
                used += f.encoded_len();
                frames.push(f);
            }
            if app {
                if self.pending.handshake_done && budget > used {
                    self.pending.handshake_done = false;
                    sent_frames.handshake_done = true;
                    frames.push(Frame::HandshakeDone);
                    used += 1;
                }
                if self.pending.ping && self.probe.is_none() && budget > used {
                    self.pending.ping = false;
                    sent_frames.ping = true;
                    frames.push(Frame::Ping);
                    used += 1;
                }
                if !self.holds_streams() {
                    while budget > used + 8 {
                        let Some(f) = self.streams.next_frame(budget - used) else { break };
                        sent_frames.stream.push((f.id, f.offset..f.offset + f.data.len() as u64, f.fin));
                        let frame = Frame::Stream(f);
                        used += frame.encoded_len();
                        frames.push(frame);
                    }
                }
            }
            if probe && !frames.iter().any(Frame::is_ack_eliciting) {
                sent_frames.ping = true;
                frames.push(Frame::Ping);
            }
        }
        if frames.is_empty() {
            return None;
        }
        let ack_eliciting = frames.iter().any(Frame::is_ack_eliciting);
        if probe && ack_eliciting {
            self.spaces[idx].probes -= 1;
        }
        // Client Initials fill the datagram so the server's amplification
        // allowance covers its first flight.
        if self.role == Role::Client && space == Space::Initial && ack_eliciting {
            let total: usize = frames.iter().map(Frame::encoded_len).sum();
            if total < budget {
                frames.push(Frame::Padding(budget - total));
            }
        }
        let remote = self.remote;
        let d = self.emit(space, remote, frames, ack_eliciting, now, sent_frames, 1)?;
        if self.role == Role::Client && space == Space::Handshake && !self.spaces[0].discarded {
            self.discard_space(Space::Initial);
        }
        Some(d)
    }

    /// Seals and records one packet. `track` is 1 for packets that count
    /// toward congestion control when ack-eliciting.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        space: Space,
        to: Addr,
        frames: Vec<Frame>,
        ack_eliciting: bool,
        now: Duration,
        sent_frames: SentFrames,
        track: u8,
    ) -> Option<Datagram> {
        let idx = space.index();
        let keys = self.spaces[idx].local_keys.clone()?;
        let header = self.header_for(space);
        let mut kinds = FrameKinds::empty();
        let mut plain = Vec::new();
        for f in &frames {
            kinds |= f.kind();
            f.encode(&mut plain);
        }
        let pn = self.spaces[idx].take_pn();
        let payload = seal_packet(&header, pn, &plain, &keys);
        let size = payload.len() as u64;
        debug_assert!(payload.len() <= MAX_DATAGRAM_SIZE);
        debug_assert!(header.encoded_len() >= 1 + PN_LEN);
        if ack_eliciting && track == 1 {
            let s = &mut self.spaces[idx];
            s.sent.insert(pn, SentPacket { time_sent: now, size, epoch: self.epoch, frames: sent_frames });
            s.last_ack_eliciting = Some(now);
            self.cc.on_packet_sent(now, size);
        }
        if !self.address_validated {
            self.bytes_sent_unvalidated += size;
        }
        self.stats.packets_sent += 1;
        self.stats.bytes_sent += size;
        Some(Datagram {
            src: self.local,
            dst: to,
            payload,
            info: DatagramInfo { kind: space.datagram_kind(), number: pn, frames: kinds },
        })
    }
}
