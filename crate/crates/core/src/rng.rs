//! Named, seed-derived random substreams.
//!
//! Every stream is a ChaCha8 generator whose 32-byte seed is the SHA-256 of
//! the top-level seed and a list of labels, so draws for one key never depend
//! on how many draws other keys made or in what order they ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn substream(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
