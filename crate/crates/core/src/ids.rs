//! Stable identifiers derived from content hashes.

use sha2::{Digest, Sha256};

/// 64-bit hash that is stable across platforms, processes and toolchain versions.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

/// Lowercase, zero-padded hexadecimal rendering of [`stable_hash64`].
pub fn stable_hex_id(bytes: &[u8]) -> String {
    format!("{:016x}", stable_hash64(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_ids_are_fixed_width() {
        let id = stable_hex_id(b"reports/q2.txt");
        assert_eq!(id.len(), 16);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(id, stable_hex_id(b"reports/q2.txt"));
        assert_ne!(id, stable_hex_id(b"reports/q3.txt"));
    }
}
