//! Packet layout and protection.
//!
//! ```text
//! long header (Initial, Handshake)
//!   u8   0xc0 | type << 4          type: 0 Initial, 2 Handshake
//!   u32  version
//!   u8   dcid length, dcid
//!   u8   scid length, scid
//!   u32  truncated packet number   (masked)
//!   ..   AEAD(frames) || tag
//!
//! short header (1-RTT)
//!   u8   0x40 | key_phase << 2
//!   u8   dcid length, dcid
//!   u32  truncated packet number   (masked)
//!   ..   AEAD(frames) || tag
//! ```
//!
//! The AEAD associated data is the header with the packet number in clear.
//! The mask is AES-ECB over the first 16 ciphertext octets, XORed into the
//! packet number field only.

use std::fmt;

use super::cid::ConnectionId;
use super::codec::Reader;
use super::TransportError;
use crate::crypto::{HeaderProtectionKey, PacketKey, Secret, Side, HP_SAMPLE_LEN, PACKET_TAG_LEN};
use crate::crypto::schedule::header_protection_secret;
use crate::net::DatagramKind;

pub const QUIC_VERSION_1: u32 = 0x0000_0001;
pub const PN_LEN: usize = 4;

const LONG_FORM: u8 = 0x80;
const FIXED_BIT: u8 = 0x40;
const KEY_PHASE_BIT: u8 = 0x04;
const TYPE_INITIAL: u8 = 0;
const TYPE_HANDSHAKE: u8 = 2;

/// Packet number space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Space {
    Initial,
    Handshake,
    Application,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::Initial, Space::Handshake, Space::Application];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn datagram_kind(self) -> DatagramKind {
        match self {
            Space::Initial => DatagramKind::Initial,
            Space::Handshake => DatagramKind::Handshake,
            Space::Application => DatagramKind::OneRtt,
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Initial => "initial",
            Space::Handshake => "handshake",
            Space::Application => "application",
        })
    }
}

/// Packet protection for one sending direction.
#[derive(Clone)]
pub struct DirectionalKeys {
    pub packet: PacketKey,
    pub header: HeaderProtectionKey,
}

impl DirectionalKeys {
    pub fn new(traffic: &Secret, hp: &Secret) -> Self {
        Self {
            packet: PacketKey::from_secret(traffic),
            header: HeaderProtectionKey::from_secret(hp),
        }
    }

    pub fn from_traffic(traffic: &Secret, side: Side) -> Self {
        Self::new(traffic, &header_protection_secret(traffic, side))
    }
}

impl fmt::Debug for DirectionalKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DirectionalKeys(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub space: Space,
    pub version: u32,
    pub dcid: ConnectionId,
    /// Present on long headers only.
    pub scid: Option<ConnectionId>,
    pub key_phase: bool,
}

impl Header {
    fn write(&self, out: &mut Vec<u8>) {
        match self.space {
            Space::Application => {
                let phase = if self.key_phase { KEY_PHASE_BIT } else { 0 };
                out.push(FIXED_BIT | phase);
                out.push(self.dcid.len() as u8);
                out.extend_from_slice(self.dcid.as_bytes());
            }
            Space::Initial | Space::Handshake => {
                let ty = if self.space == Space::Initial { TYPE_INITIAL } else { TYPE_HANDSHAKE };
                out.push(LONG_FORM | FIXED_BIT | (ty << 4));
                out.extend_from_slice(&self.version.to_be_bytes());
                out.push(self.dcid.len() as u8);
                out.extend_from_slice(self.dcid.as_bytes());
                let scid = self.scid.expect("long header carries a source CID");
                out.push(scid.len() as u8);
                out.extend_from_slice(scid.as_bytes());
            }
        }
    }

    /// Header bytes up to and including the packet number.
    pub fn encoded_len(&self) -> usize {
        let mut v = Vec::new();
        self.write(&mut v);
        v.len() + PN_LEN
    }
}

/// A parsed header whose packet number is still masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartialDecode {
    pub header: Header,
    pn_offset: usize,
}

impl PartialDecode {
    pub fn parse(buf: &[u8]) -> Result<Self, TransportError> {
        let mut r = Reader::new(buf);
        let first = r.u8()?;
        if first & FIXED_BIT == 0 {
            return Err(TransportError::InvalidHeader);
        }
        let header = if first & LONG_FORM != 0 {
            let space = match (first >> 4) & 0x03 {
                TYPE_INITIAL => Space::Initial,
                TYPE_HANDSHAKE => Space::Handshake,
                _ => return Err(TransportError::InvalidHeader),
            };
            let version = r.u32()?;
            let dcid_len = r.u8()? as usize;
            let dcid = ConnectionId::new(r.bytes(dcid_len)?)?;
            let scid_len = r.u8()? as usize;
            let scid = ConnectionId::new(r.bytes(scid_len)?)?;
            Header { space, version, dcid, scid: Some(scid), key_phase: false }
        } else {
            let dcid_len = r.u8()? as usize;
            let dcid = ConnectionId::new(r.bytes(dcid_len)?)?;
            Header {
                space: Space::Application,
                version: QUIC_VERSION_1,
                dcid,
                scid: None,
                key_phase: first & KEY_PHASE_BIT != 0,
            }
        };
        let pn_offset = r.position();
        if r.remaining() < PN_LEN + HP_SAMPLE_LEN {
            return Err(TransportError::Truncated);
        }
        Ok(Self { header, pn_offset })
    }

    /// Removes header protection and decrypts. `largest` is the largest packet
    /// number received so far in this space.
    pub fn open(
        self,
        mut buf: Vec<u8>,
        keys: &DirectionalKeys,
        largest: Option<u64>,
    ) -> Result<(u64, Vec<u8>), TransportError> {
        let off = self.pn_offset;
        let mut sample = [0u8; HP_SAMPLE_LEN];
        sample.copy_from_slice(&buf[off + PN_LEN..off + PN_LEN + HP_SAMPLE_LEN]);
        let mask = keys.header.mask(&sample);
        for i in 0..PN_LEN {
            buf[off + i] ^= mask[i];
        }
        let truncated = u32::from_be_bytes(buf[off..off + PN_LEN].try_into().unwrap());
        let pn = decode_packet_number(truncated, largest);
        let mut payload = buf.split_off(off + PN_LEN);
        keys.packet
            .open(pn, &buf, &mut payload)
            .map_err(|_| TransportError::Decrypt)?;
        Ok((pn, payload))
    }
}

/// Builds a protected packet from already-encoded frames.
pub fn seal_packet(header: &Header, pn: u64, frames: &[u8], keys: &DirectionalKeys) -> Vec<u8> {
    let mut out = Vec::with_capacity(header.encoded_len() + frames.len() + PACKET_TAG_LEN);
    header.write(&mut out);
    let pn_offset = out.len();
    out.extend_from_slice(&(pn as u32).to_be_bytes());
    let mut payload = frames.to_vec();
    // The mask sample needs 16 octets after the packet number; the tag alone
    // provides that, so no minimum payload padding is required.
    keys.packet.seal(pn, &out, &mut payload);
    out.extend_from_slice(&payload);
    let mut sample = [0u8; HP_SAMPLE_LEN];
    sample.copy_from_slice(&out[pn_offset + PN_LEN..pn_offset + PN_LEN + HP_SAMPLE_LEN]);
    let mask = keys.header.mask(&sample);
    for i in 0..PN_LEN {
        out[pn_offset + i] ^= mask[i];
    }
    out
}

/// Recovers a full packet number from its low 32 bits, choosing the candidate
/// closest to `largest + 1`.
pub fn decode_packet_number(truncated: u32, largest: Option<u64>) -> u64 {
    let expected = largest.map_or(0, |l| l + 1);
    let win: u64 = 1 << 32;
    let hwin = win / 2;
    let mask = win - 1;
    let candidate = (expected & !mask) | u64::from(truncated);
    if candidate + hwin <= expected && candidate < (1 << 62) - win {
        candidate + win
    } else if candidate > expected + hwin && candidate >= win {
        candidate - win
    } else {
        candidate
    }
}
