//! Service configuration: a TOML file overlaid with command-line flags, plus
//! loaders for policy documents and key files.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ccs_core::crypto::{self, KeyPair};
use ccs_core::fixtures;
use ccs_core::ledger::{EndorsementQuorumPolicy, NetworkConfig};
use ccs_core::policy::CertificationPolicy;
use ccs_core::workflow::TrustAnchors;
use ccs_core::{Canonical, Timestamp};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("bad policy file {path}: {reason}")]
    Policy { path: PathBuf, reason: String },
    #[error("bad key file {path}: {reason}")]
    Key { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub listen: SocketAddr,
    pub nodes: usize,
    pub quorum: usize,
    pub policy: Option<PathBuf>,
    pub chain_file: Option<PathBuf>,
    /// Seed file of the admin key; used to sign the bootstrap policy.
    pub admin_key: Option<PathBuf>,
    /// Hex public key of the CA.
    pub ca_public_key: Option<String>,
    /// Fixed timestamp for the bootstrap transaction, for reproducible chains.
    pub bootstrap_at: Option<String>,
    pub response_timeout_ms: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            nodes: 4,
            quorum: 3,
            policy: None,
            chain_file: None,
            admin_key: None,
            ca_public_key: None,
            bootstrap_at: None,
            response_timeout_ms: 2000,
        }
    }
}

impl ServeConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|e| ConfigError::File { path: path.into(), reason: e.message().to_owned() })
    }

    /// Admin key used for bootstrap. Without a key file the well-known demo
    /// key is used.
    pub fn admin_keypair(&self) -> Result<KeyPair, ConfigError> {
        match &self.admin_key {
            Some(path) => load_key(path),
            None => Ok(fixtures::admin_key()),
        }
    }

    pub fn ca_public_key_bytes(&self) -> Result<Vec<u8>, ConfigError> {
        match &self.ca_public_key {
            Some(text) => parse_public_key(text).map_err(ConfigError::Invalid),
            None => Ok(fixtures::ca_key().public_key),
        }
    }

    pub fn bootstrap_timestamp(&self) -> Result<Timestamp, ConfigError> {
        match &self.bootstrap_at {
            Some(text) => Timestamp::parse(text)
                .ok_or_else(|| ConfigError::Invalid(format!("bootstrap_at {text:?} is not an RFC 3339 UTC timestamp"))),
            None => Ok(Timestamp::now()),
        }
    }

    pub fn network_config(&self) -> Result<NetworkConfig, ConfigError> {
        let quorum = EndorsementQuorumPolicy::new(self.nodes, self.quorum).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let anchors = TrustAnchors {
            admin_public_key: self.admin_keypair()?.public_key,
            ca_public_key: self.ca_public_key_bytes()?,
        };
        let mut config = NetworkConfig::new(anchors).with_quorum(quorum);
        config.response_timeout = Duration::from_millis(self.response_timeout_ms);
        Ok(config)
    }

    pub fn load_policy(&self) -> Result<Option<CertificationPolicy>, ConfigError> {
        self.policy.as_deref().map(load_policy).transpose()
    }
}

pub fn parse_public_key(text: &str) -> Result<Vec<u8>, String> {
    let bytes = hex::decode(text.trim()).map_err(|e| format!("public key is not hex: {e}"))?;
    if bytes.len() != 32 {
        return Err(format!("public key must be 32 bytes, got {}", bytes.len()));
    }
    Ok(bytes)
}

/// Reads a policy document in canonical notation. A single trailing newline
/// is tolerated.
pub fn load_policy(path: &Path) -> Result<CertificationPolicy, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let fail = |reason: String| ConfigError::Policy { path: path.into(), reason };
    let policy = CertificationPolicy::from_canonical_bytes(&bytes)
        .or_else(|e| match bytes.strip_suffix(b"\n") {
            Some(trimmed) => CertificationPolicy::from_canonical_bytes(trimmed),
            None => Err(e),
        })
        .map_err(|e| fail(e.to_string()))?;
    policy.validate().map_err(|e| fail(e.to_string()))?;
    Ok(policy)
}

/// A key file holds the 32-byte seed as hex on one line.
pub fn load_key(path: &Path) -> Result<KeyPair, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let fail = |reason: String| ConfigError::Key { path: path.into(), reason };
    let seed = hex::decode(text.trim()).map_err(|e| fail(e.to_string()))?;
    crypto::keygen(&seed).map_err(|e| fail(e.to_string()))
}

pub fn write_key(path: &Path, key: &KeyPair) -> Result<(), ConfigError> {
    std::fs::write(path, format!("{}\n", hex::encode(&key.private_key)))
        .map_err(|source| ConfigError::Io { path: path.into(), source })
}
