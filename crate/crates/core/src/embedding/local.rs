use super::{check_text, Embedder, Embedding, ProviderKind};
use crate::error::Result;

pub const LOCAL_DIMENSION: usize = 256;

/// Offline embedder: signed hashing of character 3-grams.
///
/// Text is lowercased and whitespace-collapsed, padded with one space on
/// each side, then every 3-character window is hashed (FNV-1a) into a bucket
/// with a hash-derived sign.
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dimension: usize,
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self::new(LOCAL_DIMENSION)
    }
}

impl LocalEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

impl Embedder for LocalEmbedder {
    fn kind(&self) -> ProviderKind {
        ProviderKind::DeterministicLocal
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        check_text(text)?;
        let normalized = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let padded: Vec<char> = format!(" {normalized} ").chars().collect();

        let mut v = vec![0.0; self.dimension];
        let mut buf = [0u8; 12];
        for window in padded.windows(3) {
            let mut len = 0;
            for ch in window {
                len += ch.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(&buf[..len]);
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            // Every gram cancelled; fall back to a single whole-text bucket.
            let bucket = (fnv1a(normalized.as_bytes()) % self.dimension as u64) as usize;
            v[bucket] = 1.0;
        }
        Embedding::normalized(v)
    }
}
