//! Ordered byte streams: send buffers with retransmission bookkeeping and
//! receive-side reassembly. Flow control is not implemented.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Range;

use bytes::{Bytes, BytesMut};

use super::frame::StreamFrame;
use super::ranges::RangeSet;
use super::TransportError;
use crate::crypto::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    Bi,
    Uni,
}

pub fn stream_id(initiator: Side, dir: Dir, index: u64) -> u64 {
    let init = match initiator {
        Side::Client => 0,
        Side::Server => 1,
    };
    let d = match dir {
        Dir::Bi => 0,
        Dir::Uni => 2,
    };
    index << 2 | d | init
}

pub fn initiator(id: u64) -> Side {
    if id & 1 == 0 {
        Side::Client
    } else {
        Side::Server
    }
}

pub fn is_bidi(id: u64) -> bool {
    id & 2 == 0
}

/// Outgoing bytes from the lowest unacknowledged offset onward.
#[derive(Debug, Default)]
pub struct SendBuffer {
    chunks: VecDeque<Bytes>,
    /// Offset of the first byte of `chunks[0]`; everything below is acknowledged.
    base: u64,
    end: u64,
    unsent: u64,
    retransmit: RangeSet,
    acked: RangeSet,
}

impl SendBuffer {
    pub fn write(&mut self, data: Bytes) {
        if data.is_empty() {
            return;
        }
        self.end += data.len() as u64;
        self.chunks.push_back(data);
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn unacked(&self) -> u64 {
        self.end - self.base
    }

    pub fn unsent(&self) -> u64 {
        self.end - self.unsent
    }

    pub fn has_pending(&self) -> bool {
        !self.retransmit.is_empty() || self.unsent < self.end
    }

    pub fn is_fully_acked(&self) -> bool {
        self.base == self.end
    }

    /// Offset the next call to [`SendBuffer::take`] will start at.
    pub fn next_offset(&self) -> Option<u64> {
        self.retransmit
            .min()
            .or((self.unsent < self.end).then_some(self.unsent))
    }

    /// Up to `max_len` bytes for transmission, retransmissions first.
    pub fn take(&mut self, max_len: u64) -> Option<(u64, Bytes)> {
        if max_len == 0 {
            return None;
        }
        let range = match self.retransmit.pop_front(max_len) {
            Some(r) => r,
            None if self.unsent < self.end => {
                let r = self.unsent..self.end.min(self.unsent + max_len);
                self.unsent = r.end;
                r
            }
            None => return None,
        };
        Some((range.start, self.slice(range)))
    }

    fn slice(&self, range: Range<u64>) -> Bytes {
        debug_assert!(range.start >= self.base && range.end <= self.end);
        let mut pos = self.base;
        let mut out: Option<BytesMut> = None;
        for chunk in &self.chunks {
            let chunk_end = pos + chunk.len() as u64;
            if chunk_end > range.start {
                let from = range.start.saturating_sub(pos) as usize;
                let to = (range.end.min(chunk_end) - pos) as usize;
                let part = chunk.slice(from..to);
                if out.is_none() && chunk_end >= range.end {
                    return part;
                }
                out.get_or_insert_with(BytesMut::new).extend_from_slice(&part);
                if chunk_end >= range.end {
                    break;
                }
            }
            pos = chunk_end;
        }
        out.map(BytesMut::freeze).unwrap_or_default()
    }

    pub fn on_ack(&mut self, range: Range<u64>) {
        if range.end <= self.base {
            return;
        }
        self.acked.insert(range.start.max(self.base)..range.end);
        self.retransmit.remove(range);
        if self.acked.min() == Some(self.base) {
            let done = self.acked.pop_front(u64::MAX).unwrap();
            self.advance_base(done.end);
        }
    }

    fn advance_base(&mut self, to: u64) {
        while self.base < to {
            let Some(front) = self.chunks.front_mut() else { break };
            let len = front.len() as u64;
            if self.base + len <= to {
                self.base += len;
                self.chunks.pop_front();
            } else {
                let cut = (to - self.base) as usize;
                *front = front.slice(cut..);
                self.base = to;
            }
        }
    }

    pub fn on_lost(&mut self, range: Range<u64>) {
        let start = range.start.max(self.base);
        if start >= range.end {
            return;
        }
        self.retransmit.insert(start..range.end);
        let acked: Vec<_> = self.acked.iter().filter(|r| r.end > start && r.start < range.end).collect();
        for r in acked {
            self.retransmit.remove(r);
        }
    }

    /// Queues every unacknowledged sent byte for retransmission.
    pub fn retransmit_all(&mut self) {
        self.on_lost(self.base..self.unsent);
    }
}

#[derive(Debug, Default)]
pub struct SendStream {
    buf: SendBuffer,
    final_size: Option<u64>,
    fin_sent: bool,
    fin_acked: bool,
}

impl SendStream {
    pub fn buffer(&self) -> &SendBuffer {
        &self.buf
    }

    pub fn is_finished(&self) -> bool {
        self.final_size.is_some()
    }

    pub fn is_done(&self) -> bool {
        self.fin_acked && self.buf.is_fully_acked()
    }

    fn fin_pending(&self) -> bool {
        self.final_size.is_some() && !self.fin_sent
    }

    pub fn has_pending(&self) -> bool {
        self.buf.has_pending() || self.fin_pending()
    }
}

#[derive(Debug, Default)]
pub struct RecvStream {
    pending: BTreeMap<u64, Bytes>,
    contiguous: u64,
    readable: VecDeque<Bytes>,
    final_size: Option<u64>,
}

impl RecvStream {
    pub(crate) fn insert(&mut self, offset: u64, data: Bytes, fin: bool) -> Result<bool, TransportError> {
        let end = offset + data.len() as u64;
        if let Some(size) = self.final_size {
            if end > size || (fin && end != size) {
                return Err(TransportError::FinalSize);
            }
        }
        if fin {
            if end < self.contiguous || self.max_seen() > end {
                return Err(TransportError::FinalSize);
            }
            self.final_size = Some(end);
        }
        if end > self.contiguous && !data.is_empty() {
            match self.pending.get(&offset) {
                Some(existing) if existing.len() >= data.len() => {}
                _ => {
                    self.pending.insert(offset, data);
                }
            }
        }
        let before = self.contiguous;
        while let Some(entry) = self.pending.first_entry() {
            let off = *entry.key();
            if off > self.contiguous {
                break;
            }
            let chunk = entry.remove();
            let chunk_end = off + chunk.len() as u64;
            if chunk_end > self.contiguous {
                let skip = (self.contiguous - off) as usize;
                self.readable.push_back(chunk.slice(skip..));
                self.contiguous = chunk_end;
            }
        }
        Ok(self.contiguous > before || (fin && self.is_complete()))
    }

    fn max_seen(&self) -> u64 {
        self.pending
            .iter()
            .map(|(o, d)| o + d.len() as u64)
            .max()
            .unwrap_or(self.contiguous)
            .max(self.contiguous)
    }

    /// All bytes up to the final size have arrived.
    pub fn is_complete(&self) -> bool {
        self.final_size == Some(self.contiguous)
    }

    /// All bytes have arrived and been read.
    pub fn is_finished(&self) -> bool {
        self.is_complete() && self.readable.is_empty()
    }

    pub fn received(&self) -> u64 {
        self.contiguous
    }

    pub fn read(&mut self) -> Option<Bytes> {
        self.readable.pop_front()
    }
}

/// All streams of one connection.
#[derive(Debug)]
pub struct Streams {
    side: Side,
    send: BTreeMap<u64, SendStream>,
    recv: BTreeMap<u64, RecvStream>,
    next_index: [u64; 2],
    last_served: Option<u64>,
    readable: BTreeSet<u64>,
}

impl Streams {
    pub fn new(side: Side) -> Self {
        Self {
            side,
            send: BTreeMap::new(),
            recv: BTreeMap::new(),
            next_index: [0; 2],
            last_served: None,
            readable: BTreeSet::new(),
        }
    }

    pub fn open(&mut self, dir: Dir) -> u64 {
        let slot = match dir {
            Dir::Bi => 0,
            Dir::Uni => 1,
        };
        let id = stream_id(self.side, dir, self.next_index[slot]);
        self.next_index[slot] += 1;
        self.ensure(id);
        id
    }

    /// Creates the local halves of `id` if they do not exist yet.
    pub fn ensure(&mut self, id: u64) {
        let local = initiator(id) == self.side;
        if is_bidi(id) || local {
            self.send.entry(id).or_default();
        }
        if is_bidi(id) || !local {
            self.recv.entry(id).or_default();
        }
    }

    pub fn write(&mut self, id: u64, data: Bytes) -> Result<(), TransportError> {
        let s = self.send.get_mut(&id).ok_or(TransportError::UnknownStream(id))?;
        if s.is_finished() {
            return Err(TransportError::StreamFinished(id));
        }
        s.buf.write(data);
        Ok(())
    }

    pub fn finish(&mut self, id: u64) -> Result<(), TransportError> {
        let s = self.send.get_mut(&id).ok_or(TransportError::UnknownStream(id))?;
        if s.is_finished() {
            return Err(TransportError::StreamFinished(id));
        }
        s.final_size = Some(s.buf.end());
        Ok(())
    }

    pub fn send_stream(&self, id: u64) -> Option<&SendStream> {
        self.send.get(&id)
    }

    pub fn recv_stream(&self, id: u64) -> Option<&RecvStream> {
        self.recv.get(&id)
    }

    pub fn read(&mut self, id: u64) -> Option<Bytes> {
        let out = self.recv.get_mut(&id)?.read();
        if out.is_none() {
            self.readable.remove(&id);
        }
        out
    }

    /// Streams that received new data (or FIN) since last drained.
    pub fn take_readable(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.readable).into_iter().collect()
    }

    pub fn on_frame(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        self.ensure(frame.id);
        let r = self
            .recv
            .get_mut(&frame.id)
            .ok_or(TransportError::UnknownStream(frame.id))?;
        if r.insert(frame.offset, frame.data, frame.fin)? {
            self.readable.insert(frame.id);
        }
        Ok(())
    }

    pub fn has_pending(&self) -> bool {
        self.send.values().any(SendStream::has_pending)
    }

    /// Unsent plus unacknowledged bytes across all streams.
    pub fn buffered(&self) -> u64 {
        self.send.values().map(|s| s.buf.unacked()).sum()
    }

    /// Next frame that fits in `space` encoded bytes, round-robin across streams.
    pub fn next_frame(&mut self, space: usize) -> Option<StreamFrame> {
        let ids: Vec<u64> = match self.last_served {
            Some(last) => self
                .send
                .range(last + 1..)
                .chain(self.send.range(..=last))
                .filter(|(_, s)| s.has_pending())
                .map(|(&id, _)| id)
                .collect(),
            None => self.send.iter().filter(|(_, s)| s.has_pending()).map(|(&id, _)| id).collect(),
        };
        for id in ids {
            let s = self.send.get_mut(&id).unwrap();
            let offset = s.buf.next_offset().unwrap_or(s.buf.end());
            let header = StreamFrame::header_len(id, offset, space as u64);
            if header >= space {
                continue;
            }
            let max = (space - header) as u64;
            let (offset, data) = match s.buf.take(max) {
                Some(t) => t,
                None => (s.buf.end(), Bytes::new()),
            };
            let end = offset + data.len() as u64;
            let fin = s.final_size == Some(end);
            if data.is_empty() && !(fin && !s.fin_sent) {
                continue;
            }
            if fin {
                s.fin_sent = true;
            }
            self.last_served = Some(id);
            return Some(StreamFrame { id, offset, fin, data });
        }
        None
    }

    pub fn on_acked(&mut self, id: u64, range: Range<u64>, fin: bool) {
        if let Some(s) = self.send.get_mut(&id) {
            s.buf.on_ack(range);
            if fin {
                s.fin_acked = true;
            }
        }
    }

    pub fn on_lost(&mut self, id: u64, range: Range<u64>, fin: bool) {
        if let Some(s) = self.send.get_mut(&id) {
            s.buf.on_lost(range);
            if fin && !s.fin_acked {
                s.fin_sent = false;
            }
        }
    }

    pub fn send_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.send.keys().copied()
    }

    pub fn recv_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.recv.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u64, offset: u64, data: &'static [u8], fin: bool) -> StreamFrame {
        StreamFrame { id, offset, fin, data: Bytes::from_static(data) }
    }

    fn drain(s: &mut Streams, id: u64) -> Vec<u8> {
        let mut out = Vec::new();
        while let Some(b) = s.read(id) {
            out.extend_from_slice(&b);
        }
        out
    }

    #[test]
    fn ids_encode_initiator_and_direction() {
        assert_eq!(stream_id(Side::Client, Dir::Bi, 0), 0);
        assert_eq!(stream_id(Side::Server, Dir::Bi, 0), 1);
        assert_eq!(stream_id(Side::Client, Dir::Uni, 1), 6);
        assert_eq!(stream_id(Side::Client, Dir::Bi, 1), 4);
    }

    #[test]
    fn reassembles_out_of_order_and_overlapping() {
        let mut s = Streams::new(Side::Server);
        s.on_frame(frame(0, 6, b"world", true)).unwrap();
        s.on_frame(frame(0, 3, b"lo wo", false)).unwrap();
        assert!(drain(&mut s, 0).is_empty());
        s.on_frame(frame(0, 0, b"hel", false)).unwrap();
        assert_eq!(drain(&mut s, 0), b"hello world");
        assert!(s.recv_stream(0).unwrap().is_finished());
    }

    #[test]
    fn write_after_finish_fails() {
        let mut s = Streams::new(Side::Client);
        let id = s.open(Dir::Bi);
        s.write(id, Bytes::from_static(b"x")).unwrap();
        s.finish(id).unwrap();
        assert_eq!(s.write(id, Bytes::from_static(b"y")), Err(TransportError::StreamFinished(id)));
    }

    #[test]
    fn final_size_violation() {
        let mut s = Streams::new(Side::Server);
        s.on_frame(frame(0, 0, b"abc", true)).unwrap();
        assert_eq!(s.on_frame(frame(0, 3, b"d", false)), Err(TransportError::FinalSize));
    }

    #[test]
    fn send_buffer_retransmits_lost_ranges_only() {
        let mut b = SendBuffer::default();
        b.write(Bytes::from_static(b"0123456789"));
        assert_eq!(b.take(4).unwrap(), (0, Bytes::from_static(b"0123")));
        assert_eq!(b.take(4).unwrap(), (4, Bytes::from_static(b"4567")));
        b.on_ack(4..8);
        b.on_lost(0..8);
        assert_eq!(b.take(10).unwrap(), (0, Bytes::from_static(b"0123")));
        assert_eq!(b.take(10).unwrap(), (8, Bytes::from_static(b"89")));
        b.on_ack(0..4);
        b.on_ack(8..10);
        assert!(b.is_fully_acked());
    }

    #[test]
    fn slices_across_chunks() {
        let mut b = SendBuffer::default();
        b.write(Bytes::from_static(b"abc"));
        b.write(Bytes::from_static(b"def"));
        assert_eq!(b.take(5).unwrap(), (0, Bytes::from_static(b"abcde")));
        b.on_ack(0..2);
        b.on_lost(2..5);
        assert_eq!(b.take(10).unwrap(), (2, Bytes::from_static(b"cde")));
        assert_eq!(b.take(10).unwrap(), (5, Bytes::from_static(b"f")));
    }

    #[test]
    fn round_robin_interleaves_streams() {
        let mut s = Streams::new(Side::Client);
        let a = s.open(Dir::Bi);
        let b = s.open(Dir::Bi);
        s.write(a, Bytes::from(vec![1u8; 100])).unwrap();
        s.write(b, Bytes::from(vec![2u8; 100])).unwrap();
        let order: Vec<u64> = std::iter::from_fn(|| s.next_frame(40)).map(|f| f.id).take(4).collect();
        assert_eq!(order, vec![a, b, a, b]);
    }

    #[test]
    fn fin_only_frame_after_data() {
        let mut s = Streams::new(Side::Client);
        let id = s.open(Dir::Bi);
        s.write(id, Bytes::from_static(b"abc")).unwrap();
        let f = s.next_frame(100).unwrap();
        assert!(!f.fin);
        s.finish(id).unwrap();
        let f = s.next_frame(100).unwrap();
        assert!(f.fin && f.data.is_empty() && f.offset == 3);
        assert!(s.next_frame(100).is_none());
    }
}
