//! SHA-256 helpers shared by provenance records.

use alloc::string::String;
use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Prefixed digest string as stored in manifests, e.g. `sha256:ab12...`.
pub fn content_digest(bytes: &[u8]) -> String {
    let mut out = String::from("sha256:");
    out.push_str(&sha256_hex(bytes));
    out
}
