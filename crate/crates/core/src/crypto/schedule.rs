//! The key tree: a modeled TLS 1.3 handshake schedule feeding the transport
//! secrets, and the XADS branch hanging off the exporter master secret.
//!
//! ```text
//! shared secret ──► handshake secret ──► {client,server}_handshake_traffic_secret
//!                        │
//!                        ▼
//!                   master secret ──► <sender>_application_traffic_secret_0 ──► _1 ──► …
//!                        │                     └──► <sender>_header_protection_key
//!                        ▼
//!              exporter_master_secret ──► xads_master_secret
//!                                                │
//!                                                ▼
//!                                   <sender>_xse_<stream>_secret_0 ──► _1 ──► …
//! ```
//!
//! Every arrow is one-way. Nothing in this module maps a child back to a parent.

use std::collections::BTreeMap;

use super::hkdf::{derive_secret, empty_hash, hkdf_extract};
use super::{CryptoError, Secret, SecretLabel, Side, HASH_LEN};

/// QUIC version 1 initial salt (RFC 9001 §5.2).
const INITIAL_SALT_V1: [u8; 20] = [
    0x38, 0x76, 0x2c, 0xf7, 0xf5, 0x59, 0x34, 0xb3, 0x4d, 0x17, 0x9a, 0xe6, 0xa4, 0xc8, 0x0c,
    0xad, 0xcc, 0xbb, 0x7f, 0x0a,
];

/// Exporter label used to seed XADS. Empty context.
pub const XADS_EXPORTER_LABEL: &[u8] = b"EXPORTER-smaq-xads-master";
const XADS_UPDATE_LABEL: &[u8] = b"xse upd";
const QUIC_KEY_UPDATE_LABEL: &[u8] = b"quic ku";

pub const MAX_STREAM_ID: u64 = (1 << 62) - 1;

/// Client and server Initial secrets for a destination connection id.
pub fn initial_secrets(dcid: &[u8]) -> (Secret, Secret) {
    let initial = Secret::new(
        hkdf_extract(&INITIAL_SALT_V1, dcid),
        SecretLabel::Intermediate("initial_secret"),
    );
    let client = initial
        .expand_label(b"client in", b"", SecretLabel::Initial(Side::Client))
        .expect("static label");
    let server = initial
        .expand_label(b"server in", b"", SecretLabel::Initial(Side::Server))
        .expect("static label");
    (client, server)
}

/// Handshake traffic secrets plus the master secret they lead to.
///
/// The key exchange itself is a stub (the shared secret is supplied by the
/// caller), but the derivation chain from there on follows RFC 8446 §7.1.
#[derive(Clone, Debug)]
pub struct HandshakeSecrets {
    pub client: Secret,
    pub server: Secret,
    master: Secret,
}

impl HandshakeSecrets {
    /// `hello_hash` is the transcript hash through ServerHello.
    pub fn derive(shared_secret: &[u8], hello_hash: &[u8; HASH_LEN]) -> Self {
        let zeros = [0u8; HASH_LEN];
        let early = hkdf_extract(&zeros, &zeros);
        let derived = derive_secret(&early, b"derived", &empty_hash());
        let handshake = hkdf_extract(&derived, shared_secret);
        let hs = |label: &[u8], side| {
            Secret::new(
                derive_secret(&handshake, label, hello_hash),
                SecretLabel::HandshakeTraffic(side),
            )
        };
        let derived = derive_secret(&handshake, b"derived", &empty_hash());
        Self {
            client: hs(b"c hs traffic", Side::Client),
            server: hs(b"s hs traffic", Side::Server),
            master: Secret::new(hkdf_extract(&derived, &zeros), SecretLabel::Intermediate("master_secret")),
        }
    }

    /// Application traffic secrets (phase 0) and the exporter master secret.
    /// `finished_hash` is the transcript hash through the server Finished.
    pub fn application(&self, finished_hash: &[u8; HASH_LEN]) -> (Secret, Secret, Secret) {
        let master = self.master.as_bytes();
        let ap = |label: &[u8], sender| {
            Secret::new(
                derive_secret(master, label, finished_hash),
                SecretLabel::ApplicationTraffic { sender, phase: 0 },
            )
        };
        (
            ap(b"c ap traffic", Side::Client),
            ap(b"s ap traffic", Side::Server),
            Secret::new(
                derive_secret(master, b"exp master", finished_hash),
                SecretLabel::ExporterMaster,
            ),
        )
    }
}

/// Every secret of a completed modeled handshake.
#[derive(Clone, Debug)]
pub struct HandshakeSchedule {
    pub client_handshake: Secret,
    pub server_handshake: Secret,
    pub client_application: Secret,
    pub server_application: Secret,
    pub exporter_master: Secret,
}

impl HandshakeSchedule {
    pub fn derive(
        shared_secret: &[u8],
        hello_hash: &[u8; HASH_LEN],
        finished_hash: &[u8; HASH_LEN],
    ) -> Self {
        let hs = HandshakeSecrets::derive(shared_secret, hello_hash);
        let (client_application, server_application, exporter_master) = hs.application(finished_hash);
        Self {
            client_handshake: hs.client,
            server_handshake: hs.server,
            client_application,
            server_application,
            exporter_master,
        }
    }
}

/// Header protection key of a traffic secret.
pub fn header_protection_secret(traffic: &Secret, side: Side) -> Secret {
    traffic
        .expand_label(b"quic hp", b"", SecretLabel::HeaderProtection(side))
        .expect("static label")
}

/// `xads_master_secret` from `exporter_master_secret` via the TLS exporter
/// construction (RFC 8446 §7.5) with an empty context.
pub fn derive_xads_master(exporter_master: &Secret) -> Secret {
    let tmp = derive_secret(exporter_master.as_bytes(), XADS_EXPORTER_LABEL, &empty_hash());
    Secret::new(tmp, SecretLabel::Intermediate("xads_exporter"))
        .expand_label(b"exporter", &empty_hash(), SecretLabel::XadsMaster)
        .expect("static label")
}

fn stream_label(sender: Side, stream_id: u64) -> Vec<u8> {
    format!("xse {} {}", sender.as_str(), stream_id).into_bytes()
}

/// Phase-0 secret of one direction of one stream.
pub fn derive_stream_secret(
    master: &Secret,
    sender: Side,
    stream_id: u64,
) -> Result<Secret, CryptoError> {
    if stream_id > MAX_STREAM_ID {
        return Err(CryptoError::StreamIdOverflow(stream_id));
    }
    master.expand_label(
        &stream_label(sender, stream_id),
        b"",
        SecretLabel::XadsStream {
            sender,
            stream_id,
            phase: 0,
        },
    )
}

/// Next-phase secret (TLS 1.3 KeyUpdate).
///
/// XADS stream secrets use the `xse upd` label, transport application
/// secrets use `quic ku`.
pub fn key_update(current: &Secret) -> Result<Secret, CryptoError> {
    match current.label() {
        SecretLabel::XadsStream {
            sender,
            stream_id,
            phase,
        } => {
            let phase = phase.checked_add(1).ok_or(CryptoError::PhaseOverflow)?;
            current.expand_label(
                XADS_UPDATE_LABEL,
                b"",
                SecretLabel::XadsStream {
                    sender,
                    stream_id,
                    phase,
                },
            )
        }
        SecretLabel::ApplicationTraffic { sender, phase } => {
            let phase = phase.checked_add(1).ok_or(CryptoError::PhaseOverflow)?;
            current.expand_label(
                QUIC_KEY_UPDATE_LABEL,
                b"",
                SecretLabel::ApplicationTraffic { sender, phase },
            )
        }
        _ => Err(CryptoError::NotUpdatable),
    }
}

/// Per-connection XADS key store. Held by the endpoints only.
#[derive(Debug)]
pub struct XadsKeySchedule {
    master: Secret,
    streams: BTreeMap<(Side, u64), Secret>,
}

impl XadsKeySchedule {
    pub fn new(master: Secret) -> Self {
        Self {
            master,
            streams: BTreeMap::new(),
        }
    }

    pub fn from_exporter(exporter_master: &Secret) -> Self {
        Self::new(derive_xads_master(exporter_master))
    }

    pub fn master(&self) -> &Secret {
        &self.master
    }

    /// Current secret for `(sender, stream_id)`, deriving phase 0 on first use.
    pub fn current(&mut self, sender: Side, stream_id: u64) -> Result<&Secret, CryptoError> {
        if !self.streams.contains_key(&(sender, stream_id)) {
            let secret = derive_stream_secret(&self.master, sender, stream_id)?;
            self.streams.insert((sender, stream_id), secret);
        }
        Ok(&self.streams[&(sender, stream_id)])
    }

    pub fn phase(&self, sender: Side, stream_id: u64) -> Option<u64> {
        match self.streams.get(&(sender, stream_id))?.label() {
            SecretLabel::XadsStream { phase, .. } => Some(phase),
            _ => None,
        }
    }

    /// Advances one lane by one phase. Other lanes are untouched.
    pub fn update(&mut self, sender: Side, stream_id: u64) -> Result<&Secret, CryptoError> {
        let next = key_update(self.current(sender, stream_id)?)?;
        let slot = self.streams.get_mut(&(sender, stream_id)).expect("derived above");
        slot.wipe();
        *slot = next;
        Ok(slot)
    }

    /// Every secret currently held, master included.
    pub fn secrets(&self) -> impl Iterator<Item = &Secret> {
        std::iter::once(&self.master).chain(self.streams.values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn master() -> Secret {
        derive_xads_master(&Secret::new([0; 32], SecretLabel::ExporterMaster))
    }

    #[test]
    fn stream_secret_label_names() {
        let s = derive_stream_secret(&master(), Side::Client, 0).unwrap();
        assert_eq!(s.label().to_string(), "client_xse_0_secret_0");
        let s1 = key_update(&s).unwrap();
        assert_eq!(s1.label().to_string(), "client_xse_0_secret_1");
    }

    #[test]
    fn stream_and_direction_independence() {
        let m = master();
        let c0 = derive_stream_secret(&m, Side::Client, 0).unwrap();
        let s0 = derive_stream_secret(&m, Side::Server, 0).unwrap();
        let c4 = derive_stream_secret(&m, Side::Client, 4).unwrap();
        assert_ne!(c0.as_bytes(), s0.as_bytes());
        assert_ne!(c0.as_bytes(), c4.as_bytes());
    }

    #[test]
    fn stream_id_bound() {
        let m = master();
        assert!(derive_stream_secret(&m, Side::Client, MAX_STREAM_ID).is_ok());
        assert_eq!(
            derive_stream_secret(&m, Side::Client, 1 << 62),
            Err(CryptoError::StreamIdOverflow(1 << 62))
        );
    }

    #[test]
    fn key_update_is_not_idempotent() {
        let s0 = derive_stream_secret(&master(), Side::Client, 0).unwrap();
        let s1 = key_update(&s0).unwrap();
        let s2 = key_update(&s1).unwrap();
        assert_ne!(s0.as_bytes(), s1.as_bytes());
        assert_ne!(s1.as_bytes(), s2.as_bytes());
    }

    #[test]
    fn key_update_phase_overflow() {
        let s = Secret::new(
            [1; 32],
            SecretLabel::XadsStream {
                sender: Side::Server,
                stream_id: 3,
                phase: u64::MAX,
            },
        );
        assert_eq!(key_update(&s), Err(CryptoError::PhaseOverflow));
        assert_eq!(
            key_update(&Secret::new([1; 32], SecretLabel::XadsMaster)),
            Err(CryptoError::NotUpdatable)
        );
    }

    #[test]
    fn schedule_updates_one_lane_only() {
        let mut ks = XadsKeySchedule::new(master());
        let server0 = ks.current(Side::Server, 0).unwrap().clone();
        let client4 = ks.current(Side::Client, 4).unwrap().clone();
        ks.current(Side::Client, 0).unwrap();
        ks.update(Side::Client, 0).unwrap();
        assert_eq!(ks.phase(Side::Client, 0), Some(1));
        assert_eq!(ks.current(Side::Server, 0).unwrap(), &server0);
        assert_eq!(ks.current(Side::Client, 4).unwrap(), &client4);
        assert_eq!(ks.phase(Side::Server, 0), Some(0));
    }

    #[test]
    fn both_ends_derive_the_same_master() {
        let exporter = Secret::new([42; 32], SecretLabel::ExporterMaster);
        let client = XadsKeySchedule::from_exporter(&exporter);
        let server = XadsKeySchedule::from_exporter(&exporter.clone());
        assert_eq!(client.master(), server.master());
        let other = XadsKeySchedule::from_exporter(&Secret::new([43; 32], SecretLabel::ExporterMaster));
        assert_ne!(client.master().as_bytes(), other.master().as_bytes());
    }

    #[test]
    fn handshake_schedule_outputs_are_distinct() {
        let hs = HandshakeSchedule::derive(&[9; 32], &[1; 32], &[2; 32]);
        let all = [
            &hs.client_handshake,
            &hs.server_handshake,
            &hs.client_application,
            &hs.server_application,
            &hs.exporter_master,
        ];
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(a.as_bytes(), b.as_bytes());
            }
        }
    }

    #[test]
    fn rfc9001_initial_secrets() {
        // RFC 9001 Appendix A.1.
        let dcid = [0x83, 0x94, 0xc8, 0xf0, 0x3e, 0x51, 0x57, 0x08];
        let (client, server) = initial_secrets(&dcid);
        assert_eq!(
            client.as_bytes().to_vec(),
            hex_literal("c00cf151ca5be075ed0ebfb5c80323c42d6b7db67881289af4008f1f6c357aea")
        );
        assert_eq!(
            server.as_bytes().to_vec(),
            hex_literal("3c199828fd139efd216c155ad844cc81fb82fa8d7446fa7d78be803acdda951b")
        );
    }

    fn hex_literal(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }
}
