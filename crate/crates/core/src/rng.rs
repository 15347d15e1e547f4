//! Named random substreams derived from one master seed.
//!
//! Each consumer (edge splitting, parameter init, per-epoch sampling noise, ...) asks for its own
//! stream by name, so adding draws in one place never shifts the numbers another place sees.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

pub fn substream(seed: u64, name: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

/// Substream indexed by a step counter, e.g. one noise stream per training epoch.
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> Rng {
    substream(seed, &format!("{name}/{index}"))
}
