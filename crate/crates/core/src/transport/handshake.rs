//! Modeled handshake messages carried in CRYPTO frames.
//!
//! The layout follows TLS handshake framing (type, 24-bit length, body) but
//! the key exchange is a stub: each side contributes 32 random octets and the
//! shared secret is their hash. Finished messages are real HMACs over the
//! transcript, so a mismatched transcript fails the handshake.

use hkdf::hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

use super::codec::Reader;
use super::params::TransportParameters;
use super::TransportError;
use crate::crypto::{hkdf_expand_label, Secret, HASH_LEN};

const CLIENT_HELLO: u8 = 1;
const SERVER_HELLO: u8 = 2;
const ENCRYPTED_EXTENSIONS: u8 = 8;
const FINISHED: u8 = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    ClientHello { random: [u8; 32], share: [u8; 32], params: TransportParameters },
    ServerHello { random: [u8; 32], share: [u8; 32] },
    EncryptedExtensions { params: TransportParameters },
    Finished { verify: [u8; HASH_LEN] },
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let (ty, body) = match self {
            Message::ClientHello { random, share, params } => {
                let mut b = random.to_vec();
                b.extend_from_slice(share);
                params.encode(&mut b);
                (CLIENT_HELLO, b)
            }
            Message::ServerHello { random, share } => {
                let mut b = random.to_vec();
                b.extend_from_slice(share);
                (SERVER_HELLO, b)
            }
            Message::EncryptedExtensions { params } => {
                let mut b = Vec::new();
                params.encode(&mut b);
                (ENCRYPTED_EXTENSIONS, b)
            }
            Message::Finished { verify } => (FINISHED, verify.to_vec()),
        };
        let len = body.len() as u32;
        let mut out = vec![ty];
        out.extend_from_slice(&len.to_be_bytes()[1..]);
        out.extend_from_slice(&body);
        out
    }

    /// Parses one message from the front of `buf`. `Ok(None)` means more bytes are needed.
    pub fn parse(buf: &[u8]) -> Result<Option<(Message, usize)>, TransportError> {
        if buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([0, buf[1], buf[2], buf[3]]) as usize;
        if buf.len() < 4 + len {
            return Ok(None);
        }
        let body = &buf[4..4 + len];
        let mut r = Reader::new(body);
        let msg = match buf[0] {
            CLIENT_HELLO => Message::ClientHello {
                random: r.array()?,
                share: r.array()?,
                params: TransportParameters::decode(r.rest())?,
            },
            SERVER_HELLO => Message::ServerHello { random: r.array()?, share: r.array()? },
            ENCRYPTED_EXTENSIONS => Message::EncryptedExtensions {
                params: TransportParameters::decode(r.rest())?,
            },
            FINISHED => Message::Finished { verify: r.array()? },
            _ => return Err(TransportError::Handshake("unexpected message type")),
        };
        Ok(Some((msg, 4 + len)))
    }
}

/// Running hash over all handshake messages.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Sha256);

impl Transcript {
    pub fn update(&mut self, msg: &[u8]) {
        self.0.update(msg);
    }

    pub fn hash(&self) -> [u8; HASH_LEN] {
        self.0.clone().finalize().into()
    }
}

/// Stub key agreement: both sides hash the two shares in a fixed order.
pub fn shared_secret(client_share: &[u8; 32], server_share: &[u8; 32]) -> [u8; HASH_LEN] {
    let mut h = Sha256::new();
    h.update(b"smaq stub key exchange");
    h.update(client_share);
    h.update(server_share);
    h.finalize().into()
}

/// `HMAC(HKDF-Expand-Label(base, "finished", "", 32), transcript)`.
pub fn finished_verify(base: &Secret, transcript: &[u8; HASH_LEN]) -> [u8; HASH_LEN] {
    let mut key = [0u8; HASH_LEN];
    hkdf_expand_label(base.as_bytes(), b"finished", b"", &mut key).expect("static label");
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&key).expect("any key length");
    mac.update(transcript);
    mac.finalize().into_bytes().into()
}
