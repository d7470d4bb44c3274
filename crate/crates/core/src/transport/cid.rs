use std::fmt;

use rand::RngCore;

use super::TransportError;

pub const MAX_CID_LEN: usize = 20;
/// Length used for every locally generated CID.
pub const DEFAULT_CID_LEN: usize = 8;
pub const RESET_TOKEN_LEN: usize = 16;

/// A non-empty connection ID of up to 20 octets.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId {
    len: u8,
    bytes: [u8; MAX_CID_LEN],
}

impl ConnectionId {
    pub fn new(bytes: &[u8]) -> Result<Self, TransportError> {
        if bytes.is_empty() || bytes.len() > MAX_CID_LEN {
            return Err(TransportError::InvalidCid(bytes.len()));
        }
        let mut out = [0u8; MAX_CID_LEN];
        out[..bytes.len()].copy_from_slice(bytes);
        Ok(Self { len: bytes.len() as u8, bytes: out })
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; DEFAULT_CID_LEN];
        rng.fill_bytes(&mut bytes);
        Self::new(&bytes).expect("default length is valid")
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Debug for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid(")?;
        for b in self.as_bytes() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.as_bytes() {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Which endpoint issued a CID (and therefore receives packets carrying it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CidOwner {
    Client,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IssuedCid {
    pub owner: CidOwner,
    pub cid: ConnectionId,
    pub sequence: u64,
    pub reset_token: [u8; RESET_TOKEN_LEN],
}
