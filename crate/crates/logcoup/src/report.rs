//! Structured results of verification checks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Outcome of one empirical check: pass/fail plus the signed distance to the
/// threshold. `passed` is derived from the margin so the two can never
/// disagree (margin ≥ 0 ⟺ passed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub passed: bool,
    pub margin: f64,
    pub details: String,
    pub inputs_digest: String,
    pub seed: u64,
}

impl CheckReport {
    pub fn from_margin(
        name: &str,
        margin: f64,
        details: String,
        inputs_digest: String,
        seed: u64,
    ) -> Self {
        CheckReport {
            check_name: name.to_string(),
            passed: margin >= 0.0,
            margin,
            details,
            inputs_digest,
            seed,
        }
    }
}

/// Hex SHA-256 over a sequence of byte slices; used to fingerprint the
/// spec/config that produced a report.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
