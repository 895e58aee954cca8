//! Stable 64-bit content fingerprints (truncated SHA-256).

use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;

pub fn of_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Fingerprint of the exact bit patterns of a sequence of tensors.
pub fn of_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut hasher = Sha256::new();
    for t in tensors {
        for &d in t.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn hex(fp: u64) -> String {
    format!("{fp:016x}")
}
