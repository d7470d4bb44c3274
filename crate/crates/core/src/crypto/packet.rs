//! Transport packet protection keyed from traffic secrets (RFC 9001 §5).

use aes::cipher::BlockEncrypt;
use aes::Aes128;
use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce, Tag};

use super::{CryptoError, Secret};

pub const PACKET_TAG_LEN: usize = 16;
pub const HP_SAMPLE_LEN: usize = 16;

/// Payload AEAD for one direction.
#[derive(Clone)]
pub struct PacketKey {
    cipher: Aes128Gcm,
    iv: [u8; 12],
}

impl std::fmt::Debug for PacketKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PacketKey(..)")
    }
}

impl PacketKey {
    pub fn from_secret(secret: &Secret) -> Self {
        let mut key = [0u8; 16];
        let mut iv = [0u8; 12];
        super::hkdf_expand_label(secret.as_bytes(), b"quic key", b"", &mut key)
            .expect("static label");
        super::hkdf_expand_label(secret.as_bytes(), b"quic iv", b"", &mut iv)
            .expect("static label");
        Self {
            cipher: Aes128Gcm::new(&key.into()),
            iv,
        }
    }

    fn nonce(&self, packet_number: u64) -> [u8; 12] {
        let mut nonce = self.iv;
        for (n, p) in nonce[4..].iter_mut().zip(packet_number.to_be_bytes()) {
            *n ^= p;
        }
        nonce
    }

    /// Encrypts `payload` in place and appends the tag.
    pub fn seal(&self, packet_number: u64, header: &[u8], payload: &mut Vec<u8>) {
        let nonce = self.nonce(packet_number);
        let tag = self
            .cipher
            .encrypt_in_place_detached(Nonce::from_slice(&nonce), header, payload)
            .expect("payload within AEAD limits");
        payload.extend_from_slice(&tag);
    }

    /// Decrypts `payload` (ciphertext followed by tag) in place.
    pub fn open(
        &self,
        packet_number: u64,
        header: &[u8],
        payload: &mut Vec<u8>,
    ) -> Result<(), CryptoError> {
        if payload.len() < PACKET_TAG_LEN {
            return Err(CryptoError::Integrity);
        }
        let split = payload.len() - PACKET_TAG_LEN;
        let tag = Tag::clone_from_slice(&payload[split..]);
        payload.truncate(split);
        let nonce = self.nonce(packet_number);
        self.cipher
            .decrypt_in_place_detached(Nonce::from_slice(&nonce), header, payload, &tag)
            .map_err(|_| CryptoError::Integrity)
    }
}

/// Masks the packet number field with an AES-ECB keystream over a ciphertext sample.
#[derive(Clone)]
pub struct HeaderProtectionKey {
    cipher: Aes128,
}

impl HeaderProtectionKey {
    pub fn from_secret(hp: &Secret) -> Self {
        let key: [u8; 16] = hp.as_bytes()[..16].try_into().unwrap();
        Self {
            cipher: Aes128::new(&key.into()),
        }
    }

    pub fn mask(&self, sample: &[u8; HP_SAMPLE_LEN]) -> [u8; 4] {
        let mut block = aes::Block::clone_from_slice(sample);
        self.cipher.encrypt_block(&mut block);
        [block[0], block[1], block[2], block[3]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SecretLabel;

    #[test]
    fn seal_open_roundtrip() {
        let key = PacketKey::from_secret(&Secret::new([3; 32], SecretLabel::Intermediate("t")));
        let mut buf = b"frames".to_vec();
        key.seal(9, b"hdr", &mut buf);
        assert_eq!(buf.len(), 6 + PACKET_TAG_LEN);
        key.open(9, b"hdr", &mut buf).unwrap();
        assert_eq!(buf, b"frames");
    }

    #[test]
    fn open_rejects_wrong_header() {
        let key = PacketKey::from_secret(&Secret::new([3; 32], SecretLabel::Intermediate("t")));
        let mut buf = b"frames".to_vec();
        key.seal(9, b"hdr", &mut buf);
        assert_eq!(key.open(9, b"hdX", &mut buf), Err(CryptoError::Integrity));
    }
}
