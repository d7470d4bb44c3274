//! Addresses and datagrams shared by the transport and the emulator.

use std::fmt;

use bitflags::bitflags;

/// Largest datagram any endpoint emits.
pub const MAX_DATAGRAM_SIZE: usize = 1200;

pub type NodeId = u16;

/// A (node, port) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Addr {
    pub node: NodeId,
    pub port: u16,
}

impl Addr {
    pub const fn new(node: NodeId, port: u16) -> Self {
        Self { node, port }
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.port)
    }
}

bitflags! {
    /// Which frame types a datagram carries. Used for traces and fault matching.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
    pub struct FrameKinds: u16 {
        const PADDING = 1 << 0;
        const PING = 1 << 1;
        const ACK = 1 << 2;
        const CRYPTO = 1 << 3;
        const STREAM = 1 << 4;
        const HANDSHAKE_DONE = 1 << 5;
        const PATH_CHALLENGE = 1 << 6;
        const PATH_RESPONSE = 1 << 7;
        const CONNECTION_CLOSE = 1 << 8;
    }
}

impl fmt::Display for FrameKinds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(FrameKinds, &str); 9] = [
            (FrameKinds::PADDING, "PAD"),
            (FrameKinds::PING, "PING"),
            (FrameKinds::ACK, "ACK"),
            (FrameKinds::CRYPTO, "CRYPTO"),
            (FrameKinds::STREAM, "STREAM"),
            (FrameKinds::HANDSHAKE_DONE, "HANDSHAKE_DONE"),
            (FrameKinds::PATH_CHALLENGE, "PATH_CHALLENGE"),
            (FrameKinds::PATH_RESPONSE, "PATH_RESPONSE"),
            (FrameKinds::CONNECTION_CLOSE, "CLOSE"),
        ];
        let mut first = true;
        for (flag, name) in NAMES {
            if self.contains(flag) {
                if !first {
                    f.write_str(",")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        if first {
            f.write_str("-")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatagramKind {
    Initial,
    Handshake,
    OneRtt,
    /// Out-of-band handover channel.
    Control,
}

impl fmt::Display for DatagramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatagramKind::Initial => "I",
            DatagramKind::Handshake => "H",
            DatagramKind::OneRtt => "1",
            DatagramKind::Control => "C",
        })
    }
}

/// Plaintext summary attached by the sender. The emulator never inspects the
/// payload itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DatagramInfo {
    pub kind: DatagramKind,
    /// Packet number, or message id for the control channel.
    pub number: u64,
    pub frames: FrameKinds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub src: Addr,
    pub dst: Addr,
    pub payload: Vec<u8>,
    pub info: DatagramInfo,
}

impl Datagram {
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// One-line summary used in traces.
    pub fn summary(&self) -> String {
        format!(
            "{}>{} {}#{} {} {}B",
            self.src, self.dst, self.info.kind, self.info.number, self.info.frames, self.payload.len()
        )
    }
}
