use super::{Embedder, GatewayError};
use crate::lexical::tokenize;

pub const DEFAULT_HASH_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing of requirement tokens.
///
/// Each token lands in bucket `fnv1a_64(token) mod d` with sign +1 when the
/// hash's top bit is clear and -1 otherwise; the accumulated vector is then
/// L2-normalized. Text with no tokens, or whose signs cancel, embeds to the
/// zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, GatewayError> {
        if dim == 0 {
            return Err(GatewayError::Config("hash_embedder dimension must be positive".into()));
        }
        Ok(HashEmbedder { dim })
    }

    pub fn bucket_and_sign(&self, token: &str) -> (usize, f64) {
        let h = fnv1a_64(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: DEFAULT_HASH_DIM }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let (bucket, sign) = self.bucket_and_sign(&token);
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hash_embedder:fnv1a64:{}", self.dim)
    }

    fn max_concurrency(&self) -> usize {
        8
    }
}
