use std::ops::Range;

use bytes::Bytes;

use super::codec::{put_varint, varint_len, Reader};
use super::TransportError;
use crate::net::FrameKinds;

pub const PATH_TOKEN_LEN: usize = 8;

mod ty {
    pub const PADDING: u64 = 0x00;
    pub const PING: u64 = 0x01;
    pub const ACK: u64 = 0x02;
    pub const CRYPTO: u64 = 0x06;
    pub const STREAM_BASE: u64 = 0x08;
    pub const STREAM_MAX: u64 = 0x0f;
    pub const PATH_CHALLENGE: u64 = 0x1a;
    pub const PATH_RESPONSE: u64 = 0x1b;
    pub const CONNECTION_CLOSE: u64 = 0x1c;
    pub const HANDSHAKE_DONE: u64 = 0x1e;
}

const STREAM_OFF: u64 = 0x04;
const STREAM_LEN: u64 = 0x02;
const STREAM_FIN: u64 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckFrame {
    pub delay_micros: u64,
    /// Acknowledged ranges, highest first, disjoint and non-adjacent.
    pub ranges: Vec<Range<u64>>,
}

impl AckFrame {
    pub fn largest(&self) -> u64 {
        self.ranges[0].end - 1
    }

    pub fn contains(&self, pn: u64) -> bool {
        self.ranges.iter().any(|r| r.contains(&pn))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamFrame {
    pub id: u64,
    pub offset: u64,
    pub fin: bool,
    pub data: Bytes,
}

impl StreamFrame {
    /// Encoded size of a frame header for these fields.
    pub fn header_len(id: u64, offset: u64, len: u64) -> usize {
        1 + varint_len(id) + varint_len(offset) + varint_len(len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Padding(usize),
    Ping,
    Ack(AckFrame),
    Crypto { offset: u64, data: Bytes },
    Stream(StreamFrame),
    HandshakeDone,
    PathChallenge([u8; PATH_TOKEN_LEN]),
    PathResponse([u8; PATH_TOKEN_LEN]),
    ConnectionClose { code: u64, reason: Bytes },
}

impl Frame {
    pub fn kind(&self) -> FrameKinds {
        match self {
            Frame::Padding(_) => FrameKinds::PADDING,
            Frame::Ping => FrameKinds::PING,
            Frame::Ack(_) => FrameKinds::ACK,
            Frame::Crypto { .. } => FrameKinds::CRYPTO,
            Frame::Stream(_) => FrameKinds::STREAM,
            Frame::HandshakeDone => FrameKinds::HANDSHAKE_DONE,
            Frame::PathChallenge(_) => FrameKinds::PATH_CHALLENGE,
            Frame::PathResponse(_) => FrameKinds::PATH_RESPONSE,
            Frame::ConnectionClose { .. } => FrameKinds::CONNECTION_CLOSE,
        }
    }

    /// Frames other than ACK, PADDING and CONNECTION_CLOSE require acknowledgement.
    pub fn is_ack_eliciting(&self) -> bool {
        !matches!(self, Frame::Padding(_) | Frame::Ack(_) | Frame::ConnectionClose { .. })
    }

    /// Probing frames do not move the path on their own.
    pub fn is_probing(&self) -> bool {
        matches!(self, Frame::Padding(_) | Frame::PathChallenge(_) | Frame::PathResponse(_))
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Frame::Padding(n) => out.resize(out.len() + n, 0),
            Frame::Ping => put_varint(out, ty::PING),
            Frame::Ack(ack) => {
                put_varint(out, ty::ACK);
                let first = &ack.ranges[0];
                put_varint(out, first.end - 1);
                put_varint(out, ack.delay_micros);
                put_varint(out, (ack.ranges.len() - 1) as u64);
                put_varint(out, first.end - 1 - first.start);
                let mut prev_smallest = first.start;
                for r in &ack.ranges[1..] {
                    put_varint(out, prev_smallest - r.end - 1);
                    put_varint(out, r.end - 1 - r.start);
                    prev_smallest = r.start;
                }
            }
            Frame::Crypto { offset, data } => {
                put_varint(out, ty::CRYPTO);
                put_varint(out, *offset);
                put_varint(out, data.len() as u64);
                out.extend_from_slice(data);
            }
            Frame::Stream(s) => {
                let fin = if s.fin { STREAM_FIN } else { 0 };
                put_varint(out, ty::STREAM_BASE | STREAM_OFF | STREAM_LEN | fin);
                put_varint(out, s.id);
                put_varint(out, s.offset);
                put_varint(out, s.data.len() as u64);
                out.extend_from_slice(&s.data);
            }
            Frame::HandshakeDone => put_varint(out, ty::HANDSHAKE_DONE),
            Frame::PathChallenge(t) => {
                put_varint(out, ty::PATH_CHALLENGE);
                out.extend_from_slice(t);
            }
            Frame::PathResponse(t) => {
                put_varint(out, ty::PATH_RESPONSE);
                out.extend_from_slice(t);
            }
            Frame::ConnectionClose { code, reason } => {
                put_varint(out, ty::CONNECTION_CLOSE);
                put_varint(out, *code);
                put_varint(out, 0);
                put_varint(out, reason.len() as u64);
                out.extend_from_slice(reason);
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        let mut v = Vec::new();
        self.encode(&mut v);
        v.len()
    }

    /// Parses every frame in a decrypted packet payload.
    pub fn decode_all(payload: &Bytes) -> Result<Vec<Frame>, TransportError> {
        let mut r = Reader::new(payload);
        let mut frames = Vec::new();
        while !r.is_empty() {
            let t = r.varint()?;
            let frame = match t {
                ty::PADDING => {
                    let mut n = 1;
                    while !r.is_empty() && payload[r.position()] == 0 {
                        r.u8()?;
                        n += 1;
                    }
                    Frame::Padding(n)
                }
                ty::PING => Frame::Ping,
                ty::ACK => {
                    let largest = r.varint()?;
                    let delay_micros = r.varint()?;
                    let count = r.varint()?;
                    let first = r.varint()?;
                    let mut smallest = largest.checked_sub(first).ok_or(TransportError::InvalidFrame(t))?;
                    let mut ranges = vec![smallest..largest + 1];
                    for _ in 0..count {
                        let gap = r.varint()?;
                        let len = r.varint()?;
                        let hi = smallest
                            .checked_sub(gap + 2)
                            .ok_or(TransportError::InvalidFrame(t))?;
                        smallest = hi.checked_sub(len).ok_or(TransportError::InvalidFrame(t))?;
                        ranges.push(smallest..hi + 1);
                    }
                    Frame::Ack(AckFrame { delay_micros, ranges })
                }
                ty::CRYPTO => {
                    let offset = r.varint()?;
                    let data = slice_prefixed(&mut r, payload)?;
                    Frame::Crypto { offset, data }
                }
                ty::STREAM_BASE..=ty::STREAM_MAX => {
                    let id = r.varint()?;
                    let offset = if t & STREAM_OFF != 0 { r.varint()? } else { 0 };
                    let data = if t & STREAM_LEN != 0 {
                        slice_prefixed(&mut r, payload)?
                    } else {
                        let from = r.position();
                        r.rest();
                        payload.slice(from..)
                    };
                    Frame::Stream(StreamFrame { id, offset, fin: t & STREAM_FIN != 0, data })
                }
                ty::HANDSHAKE_DONE => Frame::HandshakeDone,
                ty::PATH_CHALLENGE => Frame::PathChallenge(r.array()?),
                ty::PATH_RESPONSE => Frame::PathResponse(r.array()?),
                ty::CONNECTION_CLOSE => {
                    let code = r.varint()?;
                    let _frame_type = r.varint()?;
                    let reason = slice_prefixed(&mut r, payload)?;
                    Frame::ConnectionClose { code, reason }
                }
                other => return Err(TransportError::InvalidFrame(other)),
            };
            frames.push(frame);
        }
        Ok(frames)
    }
}

fn slice_prefixed(r: &mut Reader<'_>, payload: &Bytes) -> Result<Bytes, TransportError> {
    let data = r.prefixed()?;
    let end = r.position();
    Ok(payload.slice(end - data.len()..end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(frames: Vec<Frame>) {
        let mut buf = Vec::new();
        for f in &frames {
            f.encode(&mut buf);
        }
        let decoded = Frame::decode_all(&Bytes::from(buf)).unwrap();
        assert_eq!(decoded, frames);
    }

    #[test]
    fn every_variant_roundtrips() {
        roundtrip(vec![
            Frame::Ping,
            Frame::Ack(AckFrame { delay_micros: 250, ranges: vec![90..101, 40..80, 0..3] }),
            Frame::Crypto { offset: 7, data: Bytes::from_static(b"hello") },
            Frame::Stream(StreamFrame { id: 4, offset: 1 << 20, fin: true, data: Bytes::from_static(b"abc") }),
            Frame::HandshakeDone,
            Frame::PathChallenge([1, 2, 3, 4, 5, 6, 7, 8]),
            Frame::PathResponse([8, 7, 6, 5, 4, 3, 2, 1]),
            Frame::ConnectionClose { code: 0x0a, reason: Bytes::from_static(b"bye") },
            Frame::Padding(12),
        ]);
    }

    #[test]
    fn unknown_type_rejected() {
        assert_eq!(
            Frame::decode_all(&Bytes::from_static(&[0x30])),
            Err(TransportError::InvalidFrame(0x30))
        );
    }

    #[test]
    fn ack_gap_underflow_rejected() {
        // largest 2, first range 1, one more range with gap 5.
        let buf = Bytes::from_static(&[0x02, 0x02, 0x00, 0x01, 0x01, 0x05, 0x00]);
        assert!(Frame::decode_all(&buf).is_err());
    }

    proptest! {
        #[test]
        fn stream_frames_roundtrip(id in 0u64..1 << 40, offset in 0u64..1 << 50, fin: bool,
                                   data in proptest::collection::vec(any::<u8>(), 0..300)) {
            roundtrip(vec![Frame::Stream(StreamFrame { id, offset, fin, data: Bytes::from(data) })]);
        }

        #[test]
        fn ack_frames_roundtrip(mut pns in proptest::collection::btree_set(0u64..5000, 1..80)) {
            let mut set = crate::transport::ranges::RangeSet::new();
            for pn in std::mem::take(&mut pns) {
                set.insert_one(pn);
            }
            let ranges: Vec<_> = set.iter().rev().collect();
            roundtrip(vec![Frame::Ack(AckFrame { delay_micros: 3, ranges })]);
        }
    }
}
