//! Provenance stamped into every artifact the toolkit writes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    /// Stamp for an artifact produced from `config` (any serializable run config).
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Self {
        ArtifactMeta {
            tool: "chatgate".to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: config_hash(config),
            seed,
        }
    }

    /// Single-line form used in text-format headers.
    pub fn to_comment(&self) -> String {
        format!(
            "{} {} config={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }

    pub fn parse_comment(s: &str) -> Option<Self> {
        let mut parts = s.split_whitespace();
        let tool = parts.next()?.to_string();
        let version = parts.next()?.to_string();
        let config_hash = parts.next()?.strip_prefix("config=")?.to_string();
        let seed = parts.next()?.strip_prefix("seed=")?.parse().ok()?;
        Some(ArtifactMeta {
            tool,
            version,
            config_hash,
            seed,
        })
    }
}

/// First 16 hex chars of the SHA-256 of the config's JSON encoding.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    hex::encode(digest)[..16].to_string()
}
