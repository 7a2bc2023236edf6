//! Root-seed fan-out.
//!
//! Every randomized stage derives its own seed as
//! `SHA-256(root_seed_le || stage_label)` truncated to the first eight
//! bytes (little-endian). Labels carry the sweep indices (protocol label,
//! packet length, replication), so adding a protocol or packet length to a
//! sweep never perturbs the draws of the others.

use sha2::{Digest, Sha256};

/// Derive the seed of a named stage from the experiment root seed.
pub fn stage_seed(root_seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Hex SHA-256 of a canonical config serialization, stamped into every
/// emitted file header.
pub fn config_hash(canonical_json: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_json.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}
