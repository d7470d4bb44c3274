//! Key derivation and record protection.
//!
//! Everything here is built on HKDF-SHA256 and AES-128-GCM, the single suite
//! this crate supports. The module covers three layers:
//!
//! * [`hkdf`]: `HKDF-Expand-Label` and friends,
//! * [`schedule`]: the modeled handshake schedule, the exporter, and the
//!   XADS key tree (master secret, per-stream secrets, key updates),
//! * [`record`] and [`packet`]: AEAD protection for XADS records and for
//!   transport packets.

pub mod hkdf;
pub mod packet;
pub mod record;
pub mod schedule;
mod secret;

pub use self::hkdf::{derive_secret, hkdf_expand_label, hkdf_extract};
pub use self::packet::{HeaderProtectionKey, PacketKey, HP_SAMPLE_LEN, PACKET_TAG_LEN};
pub use self::record::{
    protect_record, unprotect_record, RecordKey, XadsRecord, MAX_RECORD_PAYLOAD, RECORD_HEADER_LEN, RECORD_OVERHEAD,
};
pub use self::schedule::{
    derive_stream_secret, derive_xads_master, key_update, HandshakeSchedule, HandshakeSecrets, XadsKeySchedule,
};
pub use self::secret::{Secret, SecretLabel, SECRET_LEN};

use std::fmt;

/// Output length of the hash function (SHA-256).
pub const HASH_LEN: usize = 32;

/// `TLS_AES_128_GCM_SHA256`.
pub const CIPHER_SUITE_AES_128_GCM_SHA256: u16 = 0x1301;

/// Which endpoint a secret, key or stream direction belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Client,
    Server,
}

impl Side {
    pub fn peer(self) -> Side {
        match self {
            Side::Client => Side::Server,
            Side::Server => Side::Client,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Client => "client",
            Side::Server => "server",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("requested output length {0} exceeds 255 * hash length")]
    OutputTooLong(usize),
    #[error("label of {0} octets exceeds 249 octets")]
    LabelTooLong(usize),
    #[error("context of {0} octets exceeds 255 octets")]
    ContextTooLong(usize),
    #[error("stream id {0} is not below 2^62")]
    StreamIdOverflow(u64),
    #[error("secret has no key phase")]
    NotUpdatable,
    #[error("key phase counter exhausted")]
    PhaseOverflow,
    #[error("record payload of {0} octets exceeds 2^14")]
    RecordTooLarge(usize),
    #[error("record sequence number exhausted")]
    SequenceOverflow,
    #[error("malformed record")]
    MalformedRecord,
    #[error("authentication failed")]
    Integrity,
}
