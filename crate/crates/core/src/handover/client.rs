use std::collections::VecDeque;
use std::time::Duration;

use crate::crypto::Secret;
use crate::net::{Addr, Datagram};
use crate::transport::{close_code, Connection, Event};

use super::message::{ErrorReason, HandoverMessage};
use super::oob::OobEndpoint;
use super::state::SmaqState;
use super::{HandoverEvent, DEFAULT_MIGRATION_DEADLINE};

#[derive(Debug, Clone)]
pub struct ClientHandoverConfig {
    /// Out-of-band address of the first middlebox.
    pub pep_oob: Addr,
    pub local_oob: Addr,
    pub psk: Secret,
    pub oob_rtt_estimate: Duration,
    /// How long after the offer the client waits for the facade to reach it.
    pub handover_deadline: Duration,
}

impl ClientHandoverConfig {
    pub fn new(pep_oob: Addr, local_oob: Addr, psk: Secret, oob_rtt_estimate: Duration) -> Self {
        Self { pep_oob, local_oob, psk, oob_rtt_estimate, handover_deadline: DEFAULT_MIGRATION_DEADLINE }
    }

    /// No answer within this time means the middlebox is unreachable.
    pub fn fallback_timeout(&self) -> Duration {
        3 * self.oob_rtt_estimate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    Idle,
    Offered,
    Accepted { facade: Addr },
    Migrated { facade: Addr },
    /// Continuing as plain end-to-end QUIC; `None` means no answer arrived.
    FellBack(Option<ErrorReason>),
    Failed,
}

impl ClientPhase {
    /// The handover has reached a state it will not leave on its own.
    pub fn is_terminal(self) -> bool {
        matches!(self, ClientPhase::Idle | ClientPhase::Migrated { .. } | ClientPhase::FellBack(_) | ClientPhase::Failed)
    }
}

/// Client side of the handover: captures the state once keys exist, offers it
/// out of band and follows the middlebox's facade.
#[derive(Debug)]
pub struct ClientHandover {
    config: ClientHandoverConfig,
    session: u64,
    oob: OobEndpoint,
    phase: ClientPhase,
    server: Option<Addr>,
    state_created_at: Option<Duration>,
    migrated_at: Option<Duration>,
    fallback_at: Option<Duration>,
    deadline: Option<Duration>,
    events: VecDeque<HandoverEvent>,
}

impl ClientHandover {
    pub fn new(config: ClientHandoverConfig, session: u64) -> Self {
        Self {
            oob: OobEndpoint::new(config.local_oob, config.psk.clone()),
            config,
            session,
            phase: ClientPhase::Idle,
            server: None,
            state_created_at: None,
            migrated_at: None,
            fallback_at: None,
            deadline: None,
            events: VecDeque::new(),
        }
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    pub fn oob_addr(&self) -> Addr {
        self.oob.local_addr()
    }

    pub fn state_created_at(&self) -> Option<Duration> {
        self.state_created_at
    }

    pub fn migrated_at(&self) -> Option<Duration> {
        self.migrated_at
    }

    /// Time from state creation to the path switch onto the facade.
    pub fn migration_time(&self) -> Option<Duration> {
        Some(self.migrated_at? - self.state_created_at?)
    }

    pub fn poll_event(&mut self) -> Option<HandoverEvent> {
        self.events.pop_front()
    }

    fn log(&mut self, now: Duration, event: &'static str, details: String) {
        self.events.push_back(HandoverEvent { time: now, event, details });
    }

    /// Feeds a connection event; call for every event the connection emits.
    pub fn on_connection_event(&mut self, now: Duration, conn: &mut Connection, event: &Event) {
        match (event, self.phase) {
            (Event::KeysEstablished, ClientPhase::Idle) if conn.smaq_negotiated() => self.offer(now, conn),
            (Event::PathMigrated { to, .. }, ClientPhase::Accepted { facade }) if *to == facade => {
                self.phase = ClientPhase::Migrated { facade };
                self.migrated_at = Some(now);
                self.deadline = None;
                conn.set_hold_streams(false);
                self.log(now, "migrated", format!("{} -> {facade}", self.server.map_or_else(String::new, |a| a.to_string())));
            }
            (Event::MigrationIgnored { from, confirmed: false }, ClientPhase::Accepted { facade }) if *from == facade => {
                self.log(now, "early-ping-ignored", format!("from={from}"));
            }
            (Event::Closed(reason), phase) if !phase.is_terminal() => {
                self.phase = ClientPhase::Failed;
                self.oob.cancel(self.session);
                self.log(now, "closed", format!("{reason:?}"));
            }
            _ => {}
        }
    }

    fn offer(&mut self, now: Duration, conn: &mut Connection) {
        let Ok(state) = SmaqState::from_client(conn) else { return };
        let server = conn.remote_addr();
        self.server = Some(server);
        self.state_created_at = Some(now);
        conn.set_hold_streams(true);
        // Stream data the server sends directly after this point would race
        // the spliced copy; the middlebox's facade is the only source now.
        conn.drop_stream_packets_from(Some(server));
        let msg = HandoverMessage::StateOffer(state);
        match self.oob.send(now, self.config.pep_oob, self.config.oob_rtt_estimate, self.session, &msg) {
            Ok(_) => {
                self.phase = ClientPhase::Offered;
                self.fallback_at = Some(now + self.config.fallback_timeout());
                self.deadline = Some(now + self.config.handover_deadline);
                self.log(now, "state-created", format!("client={} server={server} pep={}", conn.local_addr(), self.config.pep_oob));
            }
            Err(e) => self.fall_back(now, conn, None, &e.to_string()),
        }
    }

    fn fall_back(&mut self, now: Duration, conn: &mut Connection, reason: Option<ErrorReason>, why: &str) {
        self.phase = ClientPhase::FellBack(reason);
        self.fallback_at = None;
        self.deadline = None;
        self.oob.cancel(self.session);
        conn.expect_peer_migration(None);
        conn.drop_stream_packets_from(None);
        conn.set_hold_streams(false);
        self.log(now, "fallback", why.to_string());
    }

    pub fn handle_datagram(&mut self, now: Duration, conn: &mut Connection, dgram: Datagram) {
        let Some(d) = self.oob.handle_datagram(now, dgram) else { return };
        if d.session != self.session || d.from != self.config.pep_oob || self.phase != ClientPhase::Offered {
            return;
        }
        match d.message {
            HandoverMessage::SmaqOk { facade } => {
                self.phase = ClientPhase::Accepted { facade };
                self.fallback_at = None;
                conn.expect_peer_migration(Some(facade));
                self.log(now, "smaq-ok", format!("facade={facade}"));
            }
            HandoverMessage::SmaqError(reason) => self.fall_back(now, conn, Some(reason), &reason.to_string()),
            HandoverMessage::StateOffer(_) => {}
        }
    }

    pub fn poll_transmit(&mut self, now: Duration) -> Option<Datagram> {
        self.oob.poll_transmit(now)
    }

    pub fn poll_timeout(&self) -> Option<Duration> {
        [self.oob.poll_timeout(), self.fallback_at, self.deadline].into_iter().flatten().min()
    }

    pub fn handle_timeout(&mut self, now: Duration, conn: &mut Connection) {
        if self.fallback_at.is_some_and(|t| t <= now) {
            self.fall_back(now, conn, None, "no answer from middlebox");
        }
        if self.deadline.is_some_and(|t| t <= now) {
            self.deadline = None;
            self.phase = ClientPhase::Failed;
            self.oob.cancel(self.session);
            conn.close(close_code::HANDOVER_TIMEOUT);
            self.log(now, "handover-timeout", String::new());
        }
    }
}
