//! Middlebox insertion: state capture, the out-of-band offer, restore checks,
//! PING-triggered migration on both sides, splicing and transitive handover.

mod client;
mod message;
mod middlebox;
mod oob;
mod state;

use std::time::Duration;

pub use client::{ClientHandover, ClientHandoverConfig, ClientPhase};
pub use message::{ErrorReason, HandoverMessage};
pub use middlebox::{Downstream, Middlebox, MiddleboxConfig, SessionOutcome};
pub use oob::{retransmission_timeout, Delivered, OobEndpoint};
pub use state::{ActiveCid, PacketNumbers, SmaqState, STATE_MAGIC, STATE_VERSION};

use crate::crypto::CIPHER_SUITE_AES_128_GCM_SHA256;
use crate::transport::{params, TransportError, QUIC_VERSION_1};

/// Packet numbers a restored facade skips past the values in the state, so
/// that packets the origin endpoint sent after the snapshot are never reused.
pub const PN_RESTORE_GAP: u64 = 1 << 16;

pub const DEFAULT_MIGRATION_DEADLINE: Duration = Duration::from_secs(8);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandoverError {
    #[error("connection keys not yet established")]
    StateNotReady,
    #[error("malformed state or message: {0}")]
    Malformed(&'static str),
    #[error("unknown state format version {0}")]
    UnknownStateVersion(u8),
    #[error("message of {0} octets does not fit a datagram")]
    MessageTooLarge(usize),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// What a middlebox implementation can restore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities {
    pub versions: Vec<u32>,
    pub cipher_suites: Vec<u16>,
    pub parameters: Vec<u64>,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self {
            versions: vec![QUIC_VERSION_1],
            cipher_suites: vec![CIPHER_SUITE_AES_128_GCM_SHA256],
            parameters: params::SUPPORTED.to_vec(),
        }
    }
}

impl Capabilities {
    /// Restore-time compatibility check.
    pub fn check(&self, state: &SmaqState) -> Result<(), ErrorReason> {
        if !self.versions.contains(&state.quic_version) {
            return Err(ErrorReason::VersionUnsupported);
        }
        if !self.cipher_suites.contains(&state.cipher_suite) {
            return Err(ErrorReason::CipherUnsupported);
        }
        let (c, s) = &state.transport_parameters;
        if c.iter().chain(s.iter()).any(|(id, _)| !self.parameters.contains(&id)) {
            return Err(ErrorReason::TransportParameterUnsupported);
        }
        Ok(())
    }
}

/// A protocol event for the handover trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverEvent {
    pub time: Duration,
    pub event: &'static str,
    pub details: String,
}

#[cfg(test)]
mod tests;
