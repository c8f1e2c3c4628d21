//! Shared output-file conventions: every emitted file starts with a comment
//! header recording the tool version, the seed and a hash of the effective
//! configuration, so reruns with equal headers are byte-identical.

use sha2::{Digest, Sha256};

/// Hex digest (first 12 chars) of a canonical configuration string.
pub fn config_hash(canonical: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::new();
    for b in digest.iter().take(6) {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Standard first line of every output file.
pub fn file_header(seed: u64, canonical_config: &str) -> String {
    format!(
        "# ltcli v{} seed={} config={}\n",
        crate::VERSION,
        seed,
        config_hash(canonical_config)
    )
}

/// Deterministic 64-bit mix used to derive independent sub-seeds (per grid
/// cell, restart, athlete) from one base seed.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        x ^= p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        // splitmix64 finalizer
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}
