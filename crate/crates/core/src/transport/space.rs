//! Per packet-number-space send and receive bookkeeping.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Duration;

use super::packet::DirectionalKeys;
use super::ranges::RangeSet;
use super::stream::{RecvStream, SendBuffer};

/// Ranges kept in the received-packet set; older gaps are forgotten.
const MAX_TRACKED_RANGES: usize = 64;
/// Ranges reported in one ACK frame.
pub const MAX_ACK_RANGES: usize = 32;

/// What a sent packet carried that must be repaired if it is lost.
#[derive(Debug, Clone, Default)]
pub struct SentFrames {
    pub stream: Vec<(u64, Range<u64>, bool)>,
    pub crypto: Vec<Range<u64>>,
    pub handshake_done: bool,
    pub ping: bool,
}

/// An ack-eliciting, in-flight packet awaiting acknowledgement. Packets that
/// are neither are not tracked.
#[derive(Debug, Clone)]
pub struct SentPacket {
    pub time_sent: Duration,
    pub size: u64,
    /// Path generation the packet was sent on.
    pub epoch: u32,
    pub frames: SentFrames,
}

#[derive(Debug, Default)]
pub struct PacketSpace {
    pub local_keys: Option<DirectionalKeys>,
    pub remote_keys: Option<DirectionalKeys>,
    pub next_pn: u64,
    pub largest_acked: Option<u64>,
    pub sent: BTreeMap<u64, SentPacket>,
    pub loss_time: Option<Duration>,
    pub last_ack_eliciting: Option<Duration>,
    pub received: RangeSet,
    /// Packet numbers below this were dropped from `received` and count as seen.
    pub forgotten_below: u64,
    pub largest_received: Option<u64>,
    pub largest_received_time: Duration,
    pub unacked_eliciting: u32,
    pub ack_immediately: bool,
    pub ack_deadline: Option<Duration>,
    pub crypto_send: SendBuffer,
    pub crypto_recv: RecvStream,
    pub crypto_buffer: Vec<u8>,
    /// Packets that may be sent regardless of the congestion window.
    pub probes: u8,
    pub discarded: bool,
}

impl PacketSpace {
    pub fn has_keys(&self) -> bool {
        self.local_keys.is_some() && !self.discarded
    }

    pub fn ack_eliciting_in_flight(&self) -> bool {
        !self.sent.is_empty()
    }

    pub fn is_duplicate(&self, pn: u64) -> bool {
        pn < self.forgotten_below || self.received.contains(pn)
    }

    /// Records a received packet. Returns true if it is the largest so far.
    pub fn on_received(&mut self, pn: u64, now: Duration) -> bool {
        self.received.insert_one(pn);
        if self.received.len() > MAX_TRACKED_RANGES {
            self.received.truncate_low(MAX_TRACKED_RANGES);
            self.forgotten_below = self.received.min().unwrap_or(0);
        }
        if self.largest_received.is_none_or(|l| pn > l) {
            self.largest_received = Some(pn);
            self.largest_received_time = now;
            true
        } else {
            false
        }
    }

    pub fn ack_pending(&self) -> bool {
        self.ack_immediately || self.ack_deadline.is_some()
    }

    pub fn ack_due(&self, now: Duration) -> bool {
        self.ack_immediately || self.ack_deadline.is_some_and(|d| d <= now)
    }

    pub fn ack_ranges(&self) -> Vec<Range<u64>> {
        self.received.iter().rev().take(MAX_ACK_RANGES).collect()
    }

    pub fn on_ack_sent(&mut self) {
        self.ack_immediately = false;
        self.ack_deadline = None;
        self.unacked_eliciting = 0;
    }

    pub fn take_pn(&mut self) -> u64 {
        let pn = self.next_pn;
        self.next_pn += 1;
        pn
    }

    /// Oldest outstanding ack-eliciting packet's frames, for PTO probes.
    pub fn oldest_unacked(&self) -> Option<&SentFrames> {
        self.sent.values().next().map(|p| &p.frames)
    }
}
