//! End-to-end protection of stream payloads with per-stream XADS keys.
//!
//! Each direction of each stream is a sequence of TLS-style records sealed
//! with that lane's secret. Middleboxes only ever see the records.

use std::collections::BTreeMap;

use crate::crypto::{CryptoError, RecordKey, Secret, Side, XadsKeySchedule, XadsRecord, MAX_RECORD_PAYLOAD};

#[derive(Debug)]
struct SendLane {
    key: RecordKey,
    sequence: u64,
}

#[derive(Debug)]
struct RecvLane {
    key: RecordKey,
    sequence: u64,
    pending: Vec<u8>,
}

/// One endpoint's XADS state for a connection.
#[derive(Debug)]
pub struct XadsSession {
    side: Side,
    schedule: XadsKeySchedule,
    record_size: usize,
    send: BTreeMap<u64, SendLane>,
    recv: BTreeMap<u64, RecvLane>,
}

impl XadsSession {
    /// Derives the XADS master from the connection's exporter secret.
    pub fn new(side: Side, exporter_master: &Secret) -> Self {
        Self {
            side,
            schedule: XadsKeySchedule::from_exporter(exporter_master),
            record_size: MAX_RECORD_PAYLOAD,
            send: BTreeMap::new(),
            recv: BTreeMap::new(),
        }
    }

    /// Caps the plaintext carried per record.
    pub fn with_record_size(mut self, size: usize) -> Self {
        self.record_size = size.clamp(1, MAX_RECORD_PAYLOAD);
        self
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Seals `plaintext` for `stream_id` into one or more records.
    pub fn seal(&mut self, stream_id: u64, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if !self.send.contains_key(&stream_id) {
            let key = RecordKey::from_secret(self.schedule.current(self.side, stream_id)?);
            self.send.insert(stream_id, SendLane { key, sequence: 0 });
        }
        let lane = self.send.get_mut(&stream_id).expect("inserted above");
        let mut out = Vec::with_capacity(plaintext.len() + plaintext.len() / self.record_size * 22 + 22);
        for chunk in plaintext.chunks(self.record_size) {
            lane.key.seal(chunk, lane.sequence)?.write_to(&mut out);
            lane.sequence += 1;
        }
        Ok(out)
    }

    /// Feeds received record bytes for `stream_id`; returns whatever
    /// plaintext completed records yield.
    pub fn open(&mut self, stream_id: u64, data: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if !self.recv.contains_key(&stream_id) {
            let key = RecordKey::from_secret(self.schedule.current(self.side.peer(), stream_id)?);
            self.recv.insert(stream_id, RecvLane { key, sequence: 0, pending: Vec::new() });
        }
        let lane = self.recv.get_mut(&stream_id).expect("inserted above");
        lane.pending.extend_from_slice(data);
        let mut out = Vec::new();
        let mut consumed = 0;
        while let Some((record, used)) = XadsRecord::parse(&lane.pending[consumed..])? {
            out.extend_from_slice(&lane.key.open(&record, lane.sequence)?);
            lane.sequence += 1;
            consumed += used;
        }
        lane.pending.drain(..consumed);
        Ok(out)
    }

    /// Bytes received for `stream_id` that do not yet form a whole record.
    pub fn pending(&self, stream_id: u64) -> usize {
        self.recv.get(&stream_id).map_or(0, |l| l.pending.len())
    }

    /// Every XADS secret this endpoint has derived.
    pub fn secrets(&self) -> impl Iterator<Item = &Secret> {
        self.schedule.secrets()
    }

    /// Records sealed so far on one outgoing lane.
    pub fn records_sent(&self, stream_id: u64) -> u64 {
        self.send.get(&stream_id).map_or(0, |l| l.sequence)
    }
}
