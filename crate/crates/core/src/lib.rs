//! Core library for the citation-context workbench: domain model, prompt
//! assembly, provider record/replay, run orchestration, coding storage,
//! linear probability models, and lexical measurements.

pub mod analysis;
pub mod domain;
pub mod lexical;
pub mod prompt;
pub mod orchestrator;
pub mod provider;
pub mod stats;
pub mod store;
pub mod validate;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
