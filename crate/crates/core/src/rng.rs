//! Named, independent random streams derived from a root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Stream `name` under `root`. Distinct names give unrelated streams.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(&[&root.to_le_bytes(), name.as_bytes()]))
}

/// A 64-bit seed for `name` under `root`, for recording in manifests.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let d = digest(&[&root.to_le_bytes(), name.as_bytes()]);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Per-example noise stream, independent of evaluation order.
pub fn example_stream(noise_seed: u64, example_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(&[
        b"example-noise",
        &noise_seed.to_le_bytes(),
        &example_id.to_le_bytes(),
    ]))
}
