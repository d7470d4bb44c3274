//! XADS records: TLS 1.3 record protection (RFC 8446 §5.2) over stream bytes.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce};

use super::{CryptoError, Secret};

pub const RECORD_HEADER_LEN: usize = 5;
pub const MAX_RECORD_PAYLOAD: usize = 1 << 14;
pub const TAG_LEN: usize = 16;
/// Header, tag and inner content type.
pub const RECORD_OVERHEAD: usize = RECORD_HEADER_LEN + TAG_LEN + 1;

const CONTENT_APPLICATION_DATA: u8 = 0x17;
const LEGACY_VERSION: [u8; 2] = [0x03, 0x03];
const MAX_CIPHERTEXT: usize = MAX_RECORD_PAYLOAD + 1 + TAG_LEN;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct XadsRecord {
    header: [u8; RECORD_HEADER_LEN],
    ciphertext: Vec<u8>,
}

impl XadsRecord {
    pub fn header(&self) -> &[u8; RECORD_HEADER_LEN] {
        &self.header
    }

    pub fn ciphertext(&self) -> &[u8] {
        &self.ciphertext
    }

    pub fn ciphertext_mut(&mut self) -> &mut [u8] {
        &mut self.ciphertext
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.ciphertext.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.header);
        out.extend_from_slice(&self.ciphertext);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Parses one record from the front of `buf`.
    ///
    /// Returns `Ok(None)` when `buf` holds only a prefix of a record.
    pub fn parse(buf: &[u8]) -> Result<Option<(XadsRecord, usize)>, CryptoError> {
        if buf.len() < RECORD_HEADER_LEN {
            return Ok(None);
        }
        let header: [u8; RECORD_HEADER_LEN] = buf[..RECORD_HEADER_LEN].try_into().unwrap();
        if header[0] != CONTENT_APPLICATION_DATA || header[1..3] != LEGACY_VERSION {
            return Err(CryptoError::MalformedRecord);
        }
        let len = u16::from_be_bytes([header[3], header[4]]) as usize;
        if !(TAG_LEN + 1..=MAX_CIPHERTEXT).contains(&len) {
            return Err(CryptoError::MalformedRecord);
        }
        let total = RECORD_HEADER_LEN + len;
        if buf.len() < total {
            return Ok(None);
        }
        let record = XadsRecord {
            header,
            ciphertext: buf[RECORD_HEADER_LEN..total].to_vec(),
        };
        Ok(Some((record, total)))
    }
}

/// AEAD key and IV of one XADS lane at one key phase.
pub struct RecordKey {
    cipher: Aes128Gcm,
    iv: [u8; 12],
}

impl std::fmt::Debug for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RecordKey(..)")
    }
}

impl RecordKey {
    pub fn from_secret(secret: &Secret) -> Self {
        let mut key = [0u8; 16];
        let mut iv = [0u8; 12];
        super::hkdf_expand_label(secret.as_bytes(), b"key", b"", &mut key).expect("static label");
        super::hkdf_expand_label(secret.as_bytes(), b"iv", b"", &mut iv).expect("static label");
        Self {
            cipher: Aes128Gcm::new(&key.into()),
            iv,
        }
    }

    fn nonce(&self, sequence: u64) -> [u8; 12] {
        let mut nonce = self.iv;
        for (n, s) in nonce[4..].iter_mut().zip(sequence.to_be_bytes()) {
            *n ^= s;
        }
        nonce
    }

    pub fn seal(&self, payload: &[u8], sequence: u64) -> Result<XadsRecord, CryptoError> {
        if payload.len() > MAX_RECORD_PAYLOAD {
            return Err(CryptoError::RecordTooLarge(payload.len()));
        }
        if sequence == u64::MAX {
            return Err(CryptoError::SequenceOverflow);
        }
        let len = (payload.len() + 1 + TAG_LEN) as u16;
        let mut header = [CONTENT_APPLICATION_DATA, LEGACY_VERSION[0], LEGACY_VERSION[1], 0, 0];
        header[3..].copy_from_slice(&len.to_be_bytes());
        let mut buf = Vec::with_capacity(len as usize);
        buf.extend_from_slice(payload);
        buf.push(CONTENT_APPLICATION_DATA);
        let nonce = self.nonce(sequence);
        self.cipher
            .encrypt_in_place(Nonce::from_slice(&nonce), &header, &mut buf)
            .map_err(|_| CryptoError::Integrity)?;
        Ok(XadsRecord {
            header,
            ciphertext: buf,
        })
    }

    pub fn open(&self, record: &XadsRecord, sequence: u64) -> Result<Vec<u8>, CryptoError> {
        let nonce = self.nonce(sequence);
        let mut buf = record.ciphertext.clone();
        self.cipher
            .decrypt_in_place(Nonce::from_slice(&nonce), &record.header, &mut buf)
            .map_err(|_| CryptoError::Integrity)?;
        while let Some(&last) = buf.last() {
            if last != 0 {
                break;
            }
            buf.pop();
        }
        match buf.pop() {
            Some(CONTENT_APPLICATION_DATA) => Ok(buf),
            _ => Err(CryptoError::MalformedRecord),
        }
    }
}

pub fn protect_record(
    payload: &[u8],
    secret: &Secret,
    sequence: u64,
) -> Result<XadsRecord, CryptoError> {
    RecordKey::from_secret(secret).seal(payload, sequence)
}

pub fn unprotect_record(
    record: &XadsRecord,
    secret: &Secret,
    sequence: u64,
) -> Result<Vec<u8>, CryptoError> {
    RecordKey::from_secret(secret).open(record, sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SecretLabel;

    fn secret() -> Secret {
        Secret::new([5; 32], SecretLabel::Intermediate("test"))
    }

    #[test]
    fn empty_payload_is_minimum_overhead() {
        let r = protect_record(&[], &secret(), 0).unwrap();
        assert_eq!(r.encoded_len(), 22);
        assert_eq!(unprotect_record(&r, &secret(), 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn full_payload_overhead() {
        let payload = vec![0xab; MAX_RECORD_PAYLOAD];
        let r = protect_record(&payload, &secret(), 7).unwrap();
        assert_eq!(r.encoded_len(), 16406);
        let overhead: f64 = 22.0 / 16406.0 * 100.0;
        assert!((overhead - 0.134).abs() < 0.001, "{overhead}");
    }

    #[test]
    fn oversize_payload_rejected() {
        let payload = vec![0; MAX_RECORD_PAYLOAD + 1];
        assert_eq!(
            protect_record(&payload, &secret(), 0),
            Err(CryptoError::RecordTooLarge(MAX_RECORD_PAYLOAD + 1))
        );
    }

    #[test]
    fn bit_flip_fails_authentication() {
        let mut r = protect_record(b"hello xads", &secret(), 3).unwrap();
        r.ciphertext_mut()[2] ^= 0x01;
        assert_eq!(unprotect_record(&r, &secret(), 3), Err(CryptoError::Integrity));
    }

    #[test]
    fn wrong_sequence_fails_authentication() {
        let r = protect_record(b"hello xads", &secret(), 3).unwrap();
        assert_eq!(unprotect_record(&r, &secret(), 4), Err(CryptoError::Integrity));
    }

    #[test]
    fn parse_handles_partial_input() {
        let bytes = protect_record(b"abc", &secret(), 0).unwrap().to_bytes();
        assert_eq!(XadsRecord::parse(&bytes[..4]).unwrap(), None);
        assert_eq!(XadsRecord::parse(&bytes[..bytes.len() - 1]).unwrap(), None);
        let (rec, used) = XadsRecord::parse(&bytes).unwrap().unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(rec.to_bytes(), bytes);
        assert_eq!(
            XadsRecord::parse(&[0x16, 3, 3, 0, 20]),
            Err(CryptoError::MalformedRecord)
        );
    }
}
