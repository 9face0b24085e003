//! Small shared helpers.

/// FNV-1a over a label; used to derive independent RNG streams from one
/// master seed without depending on hasher internals that might change.
pub fn fnv1a64(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn mix_seed(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a64(label)
}
