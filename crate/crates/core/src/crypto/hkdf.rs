//! HKDF (RFC 5869) with the TLS 1.3 labeled expansion (RFC 8446 §7.1).

use ::hkdf::Hkdf;
use sha2::{Digest, Sha256};

use super::{CryptoError, Secret, SecretLabel, HASH_LEN};

const LABEL_PREFIX: &[u8] = b"tls13 ";
const MAX_LABEL_LEN: usize = 255 - LABEL_PREFIX.len();

/// `HKDF-Extract(salt, IKM)`.
pub fn hkdf_extract(salt: &[u8], ikm: &[u8]) -> [u8; HASH_LEN] {
    let (prk, _) = Hkdf::<Sha256>::extract(Some(salt), ikm);
    prk.into()
}

/// `HKDF-Expand(PRK, info, L)` writing `L = out.len()` octets.
pub fn hkdf_expand(prk: &[u8], info: &[u8], out: &mut [u8]) -> Result<(), CryptoError> {
    if out.len() > 255 * HASH_LEN {
        return Err(CryptoError::OutputTooLong(out.len()));
    }
    let hk = Hkdf::<Sha256>::from_prk(prk).map_err(|_| CryptoError::OutputTooLong(out.len()))?;
    hk.expand(info, out)
        .map_err(|_| CryptoError::OutputTooLong(out.len()))
}

/// Serialized `HkdfLabel` structure.
pub(crate) fn hkdf_label(label: &[u8], context: &[u8], length: usize) -> Result<Vec<u8>, CryptoError> {
    if length > 255 * HASH_LEN {
        return Err(CryptoError::OutputTooLong(length));
    }
    if label.len() > MAX_LABEL_LEN {
        return Err(CryptoError::LabelTooLong(label.len()));
    }
    if context.len() > 255 {
        return Err(CryptoError::ContextTooLong(context.len()));
    }
    let mut info = Vec::with_capacity(4 + LABEL_PREFIX.len() + label.len() + context.len());
    info.extend_from_slice(&(length as u16).to_be_bytes());
    info.push((LABEL_PREFIX.len() + label.len()) as u8);
    info.extend_from_slice(LABEL_PREFIX);
    info.extend_from_slice(label);
    info.push(context.len() as u8);
    info.extend_from_slice(context);
    Ok(info)
}

/// `HKDF-Expand-Label(Secret, Label, Context, Length)` with `Length = out.len()`.
pub fn hkdf_expand_label(
    secret: &[u8],
    label: &[u8],
    context: &[u8],
    out: &mut [u8],
) -> Result<(), CryptoError> {
    let info = hkdf_label(label, context, out.len())?;
    hkdf_expand(secret, &info, out)
}

/// `Derive-Secret(Secret, Label, Messages)` given the transcript hash of `Messages`.
pub fn derive_secret(secret: &[u8], label: &[u8], transcript_hash: &[u8]) -> [u8; HASH_LEN] {
    let mut out = [0u8; HASH_LEN];
    hkdf_expand_label(secret, label, transcript_hash, &mut out)
        .expect("fixed-size derivation within bounds");
    out
}

/// SHA-256 of the empty string, the transcript hash of no messages.
pub(crate) fn empty_hash() -> [u8; HASH_LEN] {
    Sha256::digest([]).into()
}

impl Secret {
    /// Derives a child secret of the same length.
    pub fn expand_label(
        &self,
        label: &[u8],
        context: &[u8],
        child: SecretLabel,
    ) -> Result<Secret, CryptoError> {
        let mut out = [0u8; HASH_LEN];
        hkdf_expand_label(self.as_bytes(), label, context, &mut out)?;
        Ok(Secret::new(out, child))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_bounds() {
        let mut out = [0u8; 32];
        let long = vec![b'a'; 250];
        assert_eq!(
            hkdf_expand_label(&[1; 32], &long, b"", &mut out),
            Err(CryptoError::LabelTooLong(250))
        );
        assert!(hkdf_expand_label(&[1; 32], &long[..249], b"", &mut out).is_ok());
        let mut huge = vec![0u8; 255 * 32 + 1];
        assert_eq!(
            hkdf_expand_label(&[1; 32], b"x", b"", &mut huge),
            Err(CryptoError::OutputTooLong(255 * 32 + 1))
        );
        assert_eq!(
            hkdf_expand_label(&[1; 32], b"x", &[0; 256], &mut out),
            Err(CryptoError::ContextTooLong(256))
        );
    }

    #[test]
    fn hkdf_label_layout() {
        let info = hkdf_label(b"key", b"", 16).unwrap();
        assert_eq!(info, b"\x00\x10\x09tls13 key\x00");
    }

    #[test]
    fn deterministic() {
        let parent = Secret::new([7; 32], SecretLabel::XadsMaster);
        let a = parent.expand_label(b"xse client 0", b"", SecretLabel::Intermediate("a")).unwrap();
        let b = parent.expand_label(b"xse client 0", b"", SecretLabel::Intermediate("a")).unwrap();
        assert_eq!(a, b);
    }
}
