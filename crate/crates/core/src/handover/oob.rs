//! Out-of-band handover channel.
//!
//! A pre-keyed, reliable message channel: the first datagram already carries
//! a protected message (no handshake), and each message is retransmitted on a
//! fixed timer until acknowledged or cancelled. Messages are sealed with
//! AES-128-GCM under a per-sender key expanded from a shared session secret.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use crate::crypto::{PacketKey, Secret, SecretLabel};
use crate::net::{Addr, Datagram, DatagramInfo, DatagramKind, FrameKinds, MAX_DATAGRAM_SIZE};
use crate::transport::codec::Reader;

use super::message::HandoverMessage;
use super::HandoverError;

const DATA: u8 = 0;
const ACK: u8 = 1;
const HEADER_LEN: usize = 9;
const TAG_LEN: usize = 16;

/// Retransmission timeout for a given round-trip estimate.
pub fn retransmission_timeout(rtt_estimate: Duration) -> Duration {
    rtt_estimate * 3 / 2
}

#[derive(Debug, Clone)]
struct Outgoing {
    peer: Addr,
    session: u64,
    body: Vec<u8>,
    rto: Duration,
    next: Duration,
    sent: u32,
}

/// A message delivered by the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub from: Addr,
    pub session: u64,
    pub message: HandoverMessage,
}

#[derive(Debug)]
pub struct OobEndpoint {
    local: Addr,
    psk: Secret,
    send_key: PacketKey,
    recv_keys: BTreeMap<Addr, PacketKey>,
    next_id: u64,
    outgoing: BTreeMap<u64, Outgoing>,
    acks: VecDeque<(Addr, u64)>,
    seen: BTreeSet<(Addr, u64)>,
    retransmissions: u64,
}

fn sender_key(psk: &Secret, sender: Addr) -> PacketKey {
    let label = format!("oob {}", sender);
    let secret = psk
        .expand_label(label.as_bytes(), b"", SecretLabel::Intermediate("oob"))
        .expect("short label");
    PacketKey::from_secret(&secret)
}

impl OobEndpoint {
    pub fn new(local: Addr, psk: Secret) -> Self {
        Self {
            send_key: sender_key(&psk, local),
            local,
            psk,
            recv_keys: BTreeMap::new(),
            next_id: 0,
            outgoing: BTreeMap::new(),
            acks: VecDeque::new(),
            seen: BTreeSet::new(),
            retransmissions: 0,
        }
    }

    pub fn local_addr(&self) -> Addr {
        self.local
    }

    /// Queues `message` for `peer`; it leaves on the next transmit.
    pub fn send(
        &mut self,
        now: Duration,
        peer: Addr,
        rtt_estimate: Duration,
        session: u64,
        message: &HandoverMessage,
    ) -> Result<u64, HandoverError> {
        let mut body = session.to_be_bytes().to_vec();
        body.extend_from_slice(&message.encode());
        if HEADER_LEN + body.len() + TAG_LEN > MAX_DATAGRAM_SIZE {
            return Err(HandoverError::MessageTooLarge(body.len()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let rto = retransmission_timeout(rtt_estimate);
        self.outgoing.insert(id, Outgoing { peer, session, body, rto, next: now, sent: 0 });
        Ok(id)
    }

    /// Stops retransmitting everything queued for `session`.
    pub fn cancel(&mut self, session: u64) {
        self.outgoing.retain(|_, o| o.session != session);
    }

    /// Stops retransmitting what is queued for `session` towards `peer` only.
    pub fn cancel_to(&mut self, session: u64, peer: Addr) {
        self.outgoing.retain(|_, o| o.session != session || o.peer != peer);
    }

    pub fn has_outstanding(&self, session: u64) -> bool {
        self.outgoing.values().any(|o| o.session == session)
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    /// Plaintext of messages awaiting acknowledgement.
    pub fn held(&self) -> impl Iterator<Item = &[u8]> {
        self.outgoing.values().map(|o| o.body.as_slice())
    }

    pub fn handle_datagram(&mut self, _now: Duration, dgram: Datagram) -> Option<Delivered> {
        let buf = dgram.payload;
        let mut r = Reader::new(&buf);
        let kind = r.u8().ok()?;
        let id = r.u64().ok()?;
        match kind {
            ACK => {
                if self.outgoing.get(&id).is_some_and(|o| o.peer == dgram.src) {
                    self.outgoing.remove(&id);
                }
                None
            }
            DATA => {
                let key = self.recv_keys.entry(dgram.src).or_insert_with(|| sender_key(&self.psk, dgram.src));
                let mut body = buf[HEADER_LEN..].to_vec();
                key.open(id, &buf[..HEADER_LEN], &mut body).ok()?;
                self.acks.push_back((dgram.src, id));
                if !self.seen.insert((dgram.src, id)) {
                    return None;
                }
                let mut r = Reader::new(&body);
                let session = r.u64().ok()?;
                let message = HandoverMessage::decode(r.rest()).ok()?;
                Some(Delivered { from: dgram.src, session, message })
            }
            _ => None,
        }
    }

    pub fn poll_transmit(&mut self, now: Duration) -> Option<Datagram> {
        if let Some((peer, id)) = self.acks.pop_front() {
            let mut payload = vec![ACK];
            payload.extend_from_slice(&id.to_be_bytes());
            return Some(self.datagram(peer, id, payload, FrameKinds::ACK));
        }
        let (&id, o) = self.outgoing.iter_mut().find(|(_, o)| o.next <= now)?;
        if o.sent > 0 {
            self.retransmissions += 1;
        }
        o.sent += 1;
        o.next = now + o.rto;
        let peer = o.peer;
        let mut payload = vec![DATA];
        payload.extend_from_slice(&id.to_be_bytes());
        let mut body = o.body.clone();
        self.send_key.seal(id, &payload, &mut body);
        payload.extend_from_slice(&body);
        Some(self.datagram(peer, id, payload, FrameKinds::empty()))
    }

    fn datagram(&self, peer: Addr, id: u64, payload: Vec<u8>, frames: FrameKinds) -> Datagram {
        Datagram {
            src: self.local,
            dst: peer,
            payload,
            info: DatagramInfo { kind: DatagramKind::Control, number: id, frames },
        }
    }

    pub fn poll_timeout(&self) -> Option<Duration> {
        self.outgoing.values().map(|o| o.next).min()
    }
}
