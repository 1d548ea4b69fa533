//! Config hashing and output headers shared by every run artifact.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const TOOL_NAME: &str = "infogap";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 16 hex digits of the SHA-256 of the canonical JSON form of `value`
/// (object keys sorted, shortest round-trip floats).
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Comment line opening every CSV artifact.
pub fn csv_header_line(hash: &str) -> String {
    format!("# {TOOL_NAME} {TOOL_VERSION} config={hash}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct A {
        b: u32,
        a: f64,
    }

    #[derive(Serialize)]
    struct B {
        a: f64,
        b: u32,
    }

    #[test]
    fn hash_ignores_field_order() {
        let h1 = config_hash(&A { b: 1, a: 0.1 }).unwrap();
        let h2 = config_hash(&B { a: 0.1, b: 1 }).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 16);
        assert_ne!(h1, config_hash(&B { a: 0.1, b: 2 }).unwrap());
    }
}
