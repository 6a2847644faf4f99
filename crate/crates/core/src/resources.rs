//! Bundled ontology, template and rule files.

use sha2::{Digest, Sha256};

pub const ONTOLOGY: &str = include_str!("../resources/ontology.toml");
pub const TEMPLATES: &str = include_str!("../resources/templates.toml");
pub const STATE_RULES: &str = include_str!("../resources/state_rules.toml");
pub const UTTERANCE_RULES: &str = include_str!("../resources/utterance_rules.toml");

/// Hex SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    hash_bytes(text.as_bytes())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
