//! The handed-over connection state and its binary format.
//!
//! Layout: magic `SMAQ`, one version octet, then exactly ten TLV fields in
//! fixed order. Each field is `type (1 octet) | length (varint) | value`.
//!
//! | type | field | value |
//! |------|-------|-------|
//! | 1 | active CIDs | count, then per CID: owner (0 client, 1 server), seq varint, length-prefixed CID |
//! | 2 | stateless reset tokens | count, then per entry: length-prefixed CID, 16-octet token |
//! | 3 | version | u32 |
//! | 4 | cipher suite | u16 |
//! | 5 | key phase | varint |
//! | 6 | traffic secrets | client secret, server secret (32 octets each) |
//! | 7 | header protection keys | client secret, server secret |
//! | 8 | endpoint addresses | client node u16, port u16, server node u16, port u16 |
//! | 9 | transport parameters | length-prefixed client map, length-prefixed server map |
//! | 10 | packet numbers | four varints, `0` = none, else `pn + 1`: client sent, client received, server sent, server received |

use crate::crypto::{Secret, SecretLabel, Side};
use crate::net::Addr;
use crate::transport::codec::{put_varint, Reader};
use crate::transport::{ApplicationSecrets, CidOwner, Connection, ConnectionId, Role, TransportParameters};

use super::HandoverError;

pub const STATE_MAGIC: &[u8; 4] = b"SMAQ";
pub const STATE_VERSION: u8 = 1;
const FIELD_COUNT: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveCid {
    pub owner: CidOwner,
    pub cid: ConnectionId,
    pub sequence: u64,
}

/// Highest packet numbers as seen by the client when the state was taken.
/// The server values are the client's best knowledge of them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PacketNumbers {
    pub client_sent: Option<u64>,
    pub client_received: Option<u64>,
    pub server_sent: Option<u64>,
    pub server_received: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmaqState {
    pub active_cids: Vec<ActiveCid>,
    pub stateless_reset_tokens: Vec<(ConnectionId, [u8; 16])>,
    pub quic_version: u32,
    pub cipher_suite: u16,
    pub key_phase: u64,
    pub traffic_secrets: (Secret, Secret),
    pub header_protection_keys: (Secret, Secret),
    /// (client, server)
    pub endpoint_addresses: (Addr, Addr),
    /// (client, server)
    pub transport_parameters: (TransportParameters, TransportParameters),
    pub packet_numbers: PacketNumbers,
}

fn traffic_label(sender: Side, phase: u64) -> SecretLabel {
    SecretLabel::ApplicationTraffic { sender, phase }
}

impl SmaqState {
    /// Captures the state of a client connection. Requires 1-RTT keys.
    pub fn from_client(conn: &Connection) -> Result<Self, HandoverError> {
        if conn.role() != Role::Client || !conn.keys_established() {
            return Err(HandoverError::StateNotReady);
        }
        let secrets = conn.application_secrets().ok_or(HandoverError::StateNotReady)?;
        let peer_params = conn.peer_params().ok_or(HandoverError::StateNotReady)?;
        let own = conn.local_cid();
        let peer = conn.peer_cid();
        let phase = conn.key_phase();
        Ok(Self {
            active_cids: vec![
                ActiveCid { owner: CidOwner::Client, cid: own.cid, sequence: own.sequence },
                ActiveCid { owner: CidOwner::Server, cid: peer.cid, sequence: peer.sequence },
            ],
            stateless_reset_tokens: vec![(own.cid, own.reset_token), (peer.cid, peer.reset_token)],
            quic_version: conn.version(),
            cipher_suite: conn.cipher_suite(),
            key_phase: phase,
            traffic_secrets: (
                secrets.client.clone().relabel(traffic_label(Side::Client, phase)),
                secrets.server.clone().relabel(traffic_label(Side::Server, phase)),
            ),
            header_protection_keys: (
                secrets.client_hp.clone().relabel(SecretLabel::HeaderProtection(Side::Client)),
                secrets.server_hp.clone().relabel(SecretLabel::HeaderProtection(Side::Server)),
            ),
            endpoint_addresses: (conn.local_addr(), conn.remote_addr()),
            transport_parameters: (conn.local_params().clone(), peer_params.clone()),
            packet_numbers: PacketNumbers {
                client_sent: conn.highest_sent(),
                client_received: conn.highest_received(),
                server_sent: conn.highest_received(),
                server_received: conn.highest_sent(),
            },
        })
    }

    pub fn client_addr(&self) -> Addr {
        self.endpoint_addresses.0
    }

    pub fn server_addr(&self) -> Addr {
        self.endpoint_addresses.1
    }

    /// The CID owned by `owner`, i.e. the one packets *to* that endpoint carry.
    pub fn cid(&self, owner: CidOwner) -> Option<ConnectionId> {
        self.active_cids.iter().find(|c| c.owner == owner).map(|c| c.cid)
    }

    pub fn reset_token(&self, cid: ConnectionId) -> Option<[u8; 16]> {
        self.stateless_reset_tokens.iter().find(|(c, _)| *c == cid).map(|(_, t)| *t)
    }

    pub fn application_secrets(&self) -> ApplicationSecrets {
        ApplicationSecrets {
            client: self.traffic_secrets.0.clone(),
            server: self.traffic_secrets.1.clone(),
            client_hp: self.header_protection_keys.0.clone(),
            server_hp: self.header_protection_keys.1.clone(),
        }
    }

    /// Copy for a downstream middlebox: only the client address changes.
    pub fn with_client_addr(&self, addr: Addr) -> Self {
        let mut s = self.clone();
        s.endpoint_addresses.0 = addr;
        s
    }

    /// Zeroes all secrets.
    pub fn wipe(&mut self) {
        self.traffic_secrets.0.wipe();
        self.traffic_secrets.1.wipe();
        self.header_protection_keys.0.wipe();
        self.header_protection_keys.1.wipe();
    }

    pub fn is_wiped(&self) -> bool {
        [&self.traffic_secrets.0, &self.traffic_secrets.1, &self.header_protection_keys.0, &self.header_protection_keys.1]
            .iter()
            .all(|s| s.as_bytes().iter().all(|&b| b == 0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(512);
        out.extend_from_slice(STATE_MAGIC);
        out.push(STATE_VERSION);
        let mut field = |ty: u8, body: Vec<u8>| {
            out.push(ty);
            put_varint(&mut out, body.len() as u64);
            out.extend_from_slice(&body);
        };

        let mut b = Vec::new();
        put_varint(&mut b, self.active_cids.len() as u64);
        for c in &self.active_cids {
            b.push(match c.owner {
                CidOwner::Client => 0,
                CidOwner::Server => 1,
            });
            put_varint(&mut b, c.sequence);
            put_prefixed(&mut b, c.cid.as_bytes());
        }
        field(1, b);

        let mut b = Vec::new();
        put_varint(&mut b, self.stateless_reset_tokens.len() as u64);
        for (cid, token) in &self.stateless_reset_tokens {
            put_prefixed(&mut b, cid.as_bytes());
            b.extend_from_slice(token);
        }
        field(2, b);

        field(3, self.quic_version.to_be_bytes().to_vec());
        field(4, self.cipher_suite.to_be_bytes().to_vec());
        let mut b = Vec::new();
        put_varint(&mut b, self.key_phase);
        field(5, b);
        field(6, [self.traffic_secrets.0.as_bytes().as_slice(), self.traffic_secrets.1.as_bytes()].concat());
        field(
            7,
            [self.header_protection_keys.0.as_bytes().as_slice(), self.header_protection_keys.1.as_bytes()].concat(),
        );
        let mut b = Vec::new();
        for a in [self.endpoint_addresses.0, self.endpoint_addresses.1] {
            b.extend_from_slice(&a.node.to_be_bytes());
            b.extend_from_slice(&a.port.to_be_bytes());
        }
        field(8, b);
        let mut b = Vec::new();
        for p in [&self.transport_parameters.0, &self.transport_parameters.1] {
            let mut enc = Vec::new();
            p.encode(&mut enc);
            put_prefixed(&mut b, &enc);
        }
        field(9, b);
        let mut b = Vec::new();
        let pn = &self.packet_numbers;
        for v in [pn.client_sent, pn.client_received, pn.server_sent, pn.server_received] {
            put_varint(&mut b, v.map_or(0, |v| v + 1));
        }
        field(10, b);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, HandoverError> {
        let mut r = Reader::new(buf);
        if r.bytes(4)? != STATE_MAGIC {
            return Err(HandoverError::Malformed("magic"));
        }
        let version = r.u8()?;
        if version != STATE_VERSION {
            return Err(HandoverError::UnknownStateVersion(version));
        }
        let mut fields: Vec<&[u8]> = Vec::with_capacity(FIELD_COUNT as usize);
        for expected in 1..=FIELD_COUNT {
            let ty = r.u8()?;
            if ty != expected {
                return Err(HandoverError::Malformed("field order"));
            }
            fields.push(r.prefixed()?);
        }
        if !r.is_empty() {
            return Err(HandoverError::Malformed("trailing bytes"));
        }

        let mut f = Reader::new(fields[0]);
        let n = f.varint()?;
        let mut active_cids = Vec::new();
        for _ in 0..n {
            let owner = match f.u8()? {
                0 => CidOwner::Client,
                1 => CidOwner::Server,
                _ => return Err(HandoverError::Malformed("cid owner")),
            };
            let sequence = f.varint()?;
            let cid = ConnectionId::new(f.prefixed()?)?;
            active_cids.push(ActiveCid { owner, cid, sequence });
        }
        finish(f)?;

        let mut f = Reader::new(fields[1]);
        let n = f.varint()?;
        let mut stateless_reset_tokens = Vec::new();
        for _ in 0..n {
            let cid = ConnectionId::new(f.prefixed()?)?;
            stateless_reset_tokens.push((cid, f.array::<16>()?));
        }
        finish(f)?;

        let mut f = Reader::new(fields[2]);
        let quic_version = f.u32()?;
        finish(f)?;
        let mut f = Reader::new(fields[3]);
        let cipher_suite = f.u16()?;
        finish(f)?;
        let mut f = Reader::new(fields[4]);
        let key_phase = f.varint()?;
        finish(f)?;

        let secret_pair = |body: &[u8], labels: (SecretLabel, SecretLabel)| -> Result<(Secret, Secret), HandoverError> {
            let mut f = Reader::new(body);
            let a = Secret::new(f.array::<32>()?, labels.0);
            let b = Secret::new(f.array::<32>()?, labels.1);
            finish(f)?;
            Ok((a, b))
        };
        let traffic_secrets =
            secret_pair(fields[5], (traffic_label(Side::Client, key_phase), traffic_label(Side::Server, key_phase)))?;
        let header_protection_keys = secret_pair(
            fields[6],
            (SecretLabel::HeaderProtection(Side::Client), SecretLabel::HeaderProtection(Side::Server)),
        )?;

        let mut f = Reader::new(fields[7]);
        let mut addr = || -> Result<Addr, HandoverError> { Ok(Addr::new(f.u16()?, f.u16()?)) };
        let endpoint_addresses = (addr()?, addr()?);
        finish(f)?;

        let mut f = Reader::new(fields[8]);
        let client = TransportParameters::decode(f.prefixed()?)?;
        let server = TransportParameters::decode(f.prefixed()?)?;
        finish(f)?;

        let mut f = Reader::new(fields[9]);
        let mut pn = || -> Result<Option<u64>, HandoverError> { Ok(f.varint()?.checked_sub(1)) };
        let packet_numbers =
            PacketNumbers { client_sent: pn()?, client_received: pn()?, server_sent: pn()?, server_received: pn()? };
        finish(f)?;

        Ok(Self {
            active_cids,
            stateless_reset_tokens,
            quic_version,
            cipher_suite,
            key_phase,
            traffic_secrets,
            header_protection_keys,
            endpoint_addresses,
            transport_parameters: (client, server),
            packet_numbers,
        })
    }
}

fn put_prefixed(out: &mut Vec<u8>, data: &[u8]) {
    put_varint(out, data.len() as u64);
    out.extend_from_slice(data);
}

fn finish(r: Reader<'_>) -> Result<(), HandoverError> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(HandoverError::Malformed("field length"))
    }
}
