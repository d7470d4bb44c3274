use std::fmt;

use crate::net::Addr;
use crate::transport::codec::Reader;

use super::state::SmaqState;
use super::HandoverError;

/// Why a middlebox refused a state offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorReason {
    VersionUnsupported,
    CipherUnsupported,
    TransportParameterUnsupported,
}

impl ErrorReason {
    fn code(self) -> u8 {
        match self {
            ErrorReason::VersionUnsupported => 1,
            ErrorReason::CipherUnsupported => 2,
            ErrorReason::TransportParameterUnsupported => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => ErrorReason::VersionUnsupported,
            2 => ErrorReason::CipherUnsupported,
            3 => ErrorReason::TransportParameterUnsupported,
            _ => return None,
        })
    }
}

impl fmt::Display for ErrorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorReason::VersionUnsupported => "version-unsupported",
            ErrorReason::CipherUnsupported => "cipher-unsupported",
            ErrorReason::TransportParameterUnsupported => "transport-parameter-unsupported",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandoverMessage {
    StateOffer(SmaqState),
    /// The state was restored; `facade` is the address that will contact the
    /// offering side.
    SmaqOk { facade: Addr },
    SmaqError(ErrorReason),
}

const OFFER: u8 = 1;
const OK: u8 = 2;
const ERROR: u8 = 3;

impl HandoverMessage {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            HandoverMessage::StateOffer(s) => {
                let mut out = vec![OFFER];
                out.extend_from_slice(&s.to_bytes());
                out
            }
            HandoverMessage::SmaqOk { facade } => {
                let mut out = vec![OK];
                out.extend_from_slice(&facade.node.to_be_bytes());
                out.extend_from_slice(&facade.port.to_be_bytes());
                out
            }
            HandoverMessage::SmaqError(reason) => vec![ERROR, reason.code()],
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, HandoverError> {
        let mut r = Reader::new(buf);
        let msg = match r.u8()? {
            OFFER => return Ok(HandoverMessage::StateOffer(SmaqState::from_bytes(r.rest())?)),
            OK => HandoverMessage::SmaqOk { facade: Addr::new(r.u16()?, r.u16()?) },
            ERROR => {
                let code = r.u8()?;
                HandoverMessage::SmaqError(ErrorReason::from_code(code).ok_or(HandoverError::Malformed("reason"))?)
            }
            _ => return Err(HandoverError::Malformed("message type")),
        };
        if !r.is_empty() {
            return Err(HandoverError::Malformed("trailing bytes"));
        }
        Ok(msg)
    }

    pub fn name(&self) -> &'static str {
        match self {
            HandoverMessage::StateOffer(_) => "state-offer",
            HandoverMessage::SmaqOk { .. } => "smaq-ok",
            HandoverMessage::SmaqError(_) => "smaq-error",
        }
    }
}
