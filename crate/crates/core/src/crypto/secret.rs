use std::fmt;

use super::Side;

pub const SECRET_LEN: usize = super::HASH_LEN;

/// Position of a secret in the derivation tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecretLabel {
    Initial(Side),
    HandshakeTraffic(Side),
    ApplicationTraffic { sender: Side, phase: u64 },
    HeaderProtection(Side),
    ExporterMaster,
    XadsMaster,
    XadsStream { sender: Side, stream_id: u64, phase: u64 },
    /// Intermediate values of the handshake schedule.
    Intermediate(&'static str),
}

impl fmt::Display for SecretLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecretLabel::Initial(side) => write!(f, "{side}_initial_secret"),
            SecretLabel::HandshakeTraffic(side) => write!(f, "{side}_handshake_traffic_secret"),
            SecretLabel::ApplicationTraffic { sender, phase } => {
                write!(f, "{sender}_application_traffic_secret_{phase}")
            }
            SecretLabel::HeaderProtection(side) => write!(f, "{side}_header_protection_key"),
            SecretLabel::ExporterMaster => f.write_str("exporter_master_secret"),
            SecretLabel::XadsMaster => f.write_str("xads_master_secret"),
            SecretLabel::XadsStream {
                sender,
                stream_id,
                phase,
            } => write!(f, "{sender}_xse_{stream_id}_secret_{phase}"),
            SecretLabel::Intermediate(name) => f.write_str(name),
        }
    }
}

/// A 32-octet secret tagged with where it sits in the key tree.
///
/// Equality compares both the octets and the label. `Debug` never prints the
/// octets.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Secret {
    bytes: [u8; SECRET_LEN],
    label: SecretLabel,
}

impl Secret {
    pub fn new(bytes: [u8; SECRET_LEN], label: SecretLabel) -> Self {
        Self { bytes, label }
    }

    pub fn from_slice(bytes: &[u8], label: SecretLabel) -> Option<Self> {
        let bytes: [u8; SECRET_LEN] = bytes.try_into().ok()?;
        Some(Self { bytes, label })
    }

    pub fn as_bytes(&self) -> &[u8; SECRET_LEN] {
        &self.bytes
    }

    pub fn label(&self) -> SecretLabel {
        self.label
    }

    pub fn relabel(mut self, label: SecretLabel) -> Self {
        self.label = label;
        self
    }

    /// Overwrites the octets with zeros.
    pub fn wipe(&mut self) {
        self.bytes = [0; SECRET_LEN];
        std::hint::black_box(&self.bytes);
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret({})", self.label)
    }
}
