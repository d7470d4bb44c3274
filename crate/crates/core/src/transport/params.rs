use std::collections::BTreeMap;
use std::time::Duration;

use super::codec::{put_varint, Reader};
use super::TransportError;

pub mod id {
    pub const MAX_IDLE_TIMEOUT: u64 = 0x01;
    pub const STATELESS_RESET_TOKEN: u64 = 0x02;
    pub const MAX_UDP_PAYLOAD_SIZE: u64 = 0x03;
    pub const MAX_ACK_DELAY: u64 = 0x0b;
    pub const ACTIVE_CONNECTION_ID_LIMIT: u64 = 0x0e;
    /// Boolean flag advertising middlebox handover support. Presence means true.
    pub const SMAQ: u64 = 0x736d_6171;
}

/// Parameter ids this implementation understands.
pub const SUPPORTED: [u64; 6] = [
    id::MAX_IDLE_TIMEOUT,
    id::STATELESS_RESET_TOKEN,
    id::MAX_UDP_PAYLOAD_SIZE,
    id::MAX_ACK_DELAY,
    id::ACTIVE_CONNECTION_ID_LIMIT,
    id::SMAQ,
];

/// Transport parameters as sent by one endpoint: id to raw value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransportParameters {
    map: BTreeMap<u64, Vec<u8>>,
}

fn varint_bytes(v: u64) -> Vec<u8> {
    let mut out = Vec::new();
    put_varint(&mut out, v);
    out
}

impl TransportParameters {
    pub fn new(idle_timeout: Duration, max_ack_delay: Duration, smaq: bool) -> Self {
        let mut p = Self::default();
        p.set(id::MAX_IDLE_TIMEOUT, varint_bytes(idle_timeout.as_millis() as u64));
        p.set(id::MAX_UDP_PAYLOAD_SIZE, varint_bytes(crate::net::MAX_DATAGRAM_SIZE as u64));
        p.set(id::MAX_ACK_DELAY, varint_bytes(max_ack_delay.as_millis() as u64));
        p.set(id::ACTIVE_CONNECTION_ID_LIMIT, varint_bytes(2));
        if smaq {
            p.set(id::SMAQ, Vec::new());
        }
        p
    }

    pub fn set(&mut self, id: u64, value: Vec<u8>) {
        self.map.insert(id, value);
    }

    pub fn remove(&mut self, id: u64) {
        self.map.remove(&id);
    }

    pub fn get(&self, id: u64) -> Option<&[u8]> {
        self.map.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.map.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn smaq(&self) -> bool {
        self.map.contains_key(&id::SMAQ)
    }

    fn varint_param(&self, id: u64) -> Option<u64> {
        self.get(id).and_then(|v| Reader::new(v).varint().ok())
    }

    pub fn idle_timeout(&self) -> Option<Duration> {
        self.varint_param(id::MAX_IDLE_TIMEOUT).map(Duration::from_millis)
    }

    pub fn stateless_reset_token(&self) -> Option<[u8; 16]> {
        self.get(id::STATELESS_RESET_TOKEN).and_then(|v| v.try_into().ok())
    }

    pub fn max_ack_delay(&self) -> Option<Duration> {
        self.varint_param(id::MAX_ACK_DELAY).map(Duration::from_millis)
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        for (&id, value) in &self.map {
            put_varint(out, id);
            put_varint(out, value.len() as u64);
            out.extend_from_slice(value);
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, TransportError> {
        let mut r = Reader::new(buf);
        let mut map = BTreeMap::new();
        while !r.is_empty() {
            let id = r.varint()?;
            let value = r.prefixed()?.to_vec();
            if map.insert(id, value).is_some() {
                return Err(TransportError::DuplicateParameter(id));
            }
        }
        Ok(Self { map })
    }
}
