//! Opacity verification and enforcement for safe partially observed quantum
//! Petri nets restricted to the stabilizer fragment.

pub mod baseline;
pub mod bundled;
pub mod certificates;
pub mod enforcement;
pub mod engine;
pub mod gen;
pub mod model;
pub mod oracle;
pub mod rational;
pub mod stabilizer;
pub mod unfolding;
pub mod verifier;

use sha2::{Digest, Sha256};

/// Hex SHA-256 of a model file, recorded in reports.
pub fn content_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Caps the worker pool used by parallel exploration. Only the first call
/// in a process takes effect.
pub fn configure_jobs(n: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}
