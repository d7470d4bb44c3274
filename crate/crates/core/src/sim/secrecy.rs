//! Scans middlebox-visible octets for end-to-end secrets and plaintext.

use aho_corasick::AhoCorasick;

/// Plaintext windows shorter than this could match by chance.
pub const MIN_PATTERN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    /// Index of the scanned buffer.
    pub buffer: usize,
    pub offset: usize,
    /// Index of the matched pattern.
    pub pattern: usize,
}

/// A multi-pattern matcher over secrets and plaintext samples.
#[derive(Debug, Clone)]
pub struct Inspector {
    matcher: AhoCorasick,
    patterns: usize,
}

impl Inspector {
    /// Patterns shorter than [`MIN_PATTERN`] are ignored.
    pub fn new<I, P>(patterns: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u8]>,
    {
        let pats: Vec<Vec<u8>> =
            patterns.into_iter().map(|p| p.as_ref().to_vec()).filter(|p| p.len() >= MIN_PATTERN).collect();
        let patterns = pats.len();
        Self { matcher: AhoCorasick::new(pats).expect("byte patterns always build"), patterns }
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns
    }

    /// Every occurrence of any pattern in `buffers`.
    pub fn scan<'a>(&self, buffers: impl IntoIterator<Item = &'a [u8]>) -> Vec<Finding> {
        let mut out = Vec::new();
        for (buffer, data) in buffers.into_iter().enumerate() {
            out.extend(self.matcher.find_overlapping_iter(data).map(|m| Finding {
                buffer,
                offset: m.start(),
                pattern: m.pattern().as_usize(),
            }));
        }
        out
    }
}

/// Samples `window`-octet slices of `data` every `stride` octets.
pub fn samples(data: &[u8], window: usize, stride: usize) -> impl Iterator<Item = &[u8]> {
    (0..data.len().saturating_sub(window - 1)).step_by(stride.max(1)).map(move |i| &data[i..i + window])
}
