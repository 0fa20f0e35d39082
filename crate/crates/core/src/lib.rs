//! Symbolic tool-use planning workbench.
//!
//! * [`worldsim`]: object-centric world state, relation geometry, goals.
//! * [`actions`]: the action grammar and the transition function.
//! * [`domains`]: catalogs, scene sampling and generalization perturbations.
//! * [`oracle`]: search-based demonstrations, corpora and augmentation.
//! * [`embed`]: word embeddings for class and relation tokens.
//! * [`policy`]: the graph-encoder / attention / factored-decoder network.
//! * [`train`]: two-phase imitation training.
//! * [`eval`]: accuracy metrics, closed-loop rollouts and test suites.
//! * [`session`]: interactive teaching sessions.

pub mod actions;
pub mod domains;
pub mod embed;
pub mod eval;
pub mod oracle;
pub mod policy;
pub mod session;
pub mod train;
pub mod worldsim;

/// Hex SHA-256 of a byte string; used for catalog and config fingerprints.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Independent child seed for a named random stream.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
