//! QUIC-like transport: packet protection, loss recovery, streams and path migration.

pub mod cid;
pub mod codec;
pub mod connection;
pub mod frame;
pub mod handshake;
pub mod packet;
pub mod params;
pub mod ranges;
pub mod space;
pub mod stream;

pub use cid::{CidOwner, ConnectionId, IssuedCid};
pub use connection::{
    close_code, ApplicationSecrets, CloseReason, Connection, ConnectionConfig, ConnectionStats, Event,
    HandshakeState, ResumeParams, Role,
};
pub use frame::{AckFrame, Frame, StreamFrame};
pub use packet::{Header, PartialDecode, Space, QUIC_VERSION_1};
pub use params::TransportParameters;
pub use stream::Dir;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("buffer truncated")]
    Truncated,
    #[error("invalid connection id length {0}")]
    InvalidCid(usize),
    #[error("invalid frame type {0:#x}")]
    InvalidFrame(u64),
    #[error("invalid packet header")]
    InvalidHeader,
    #[error("packet failed authentication")]
    Decrypt,
    #[error("duplicate transport parameter {0:#x}")]
    DuplicateParameter(u64),
    #[error("stream data beyond final size")]
    FinalSize,
    #[error("unknown stream {0}")]
    UnknownStream(u64),
    #[error("stream {0} already finished")]
    StreamFinished(u64),
    #[error("handshake failure: {0}")]
    Handshake(&'static str),
    #[error("connection closed")]
    Closed,
}
