use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, CanonicalError};
use crate::hexbytes;
use crate::workflow::ReadWriteSet;

pub const POLICY_KEY: &str = "policy";

pub fn user_key(user_id: &str) -> String {
    format!("user/{user_id}")
}

pub fn ra_key(ra_member_id: &str) -> String {
    format!("ra/{ra_member_id}")
}

/// Index from CSR id to the owning user.
pub fn csr_key(csr_id: &str) -> String {
    format!("csr/{csr_id}")
}

/// Index from certificate serial to its location.
pub fn cert_key(serial: &str) -> String {
    format!("cert/{serial}")
}

/// Index from certificate content digest to its location.
pub fn audit_key(digest_hex: &str) -> String {
    format!("audit/{digest_hex}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionedValue {
    /// Height of the block that last wrote this key.
    pub version: u64,
    #[serde(with = "hexbytes")]
    pub bytes: Vec<u8>,
}

/// Committed key/record map. Values are canonical record bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldState {
    entries: BTreeMap<String, VersionedValue>,
    last_block_height: Option<u64>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    /// `-1` before the first block is committed.
    pub fn last_block_height(&self) -> i64 {
        self.last_block_height.map_or(-1, |h| h as i64)
    }

    pub fn get_raw(&self, key: &str) -> Option<&VersionedValue> {
        self.entries.get(key)
    }

    pub fn version(&self, key: &str) -> Option<u64> {
        self.entries.get(key).map(|v| v.version)
    }

    pub fn get<T: Canonical>(&self, key: &str) -> Result<Option<T>, CanonicalError> {
        self.entries.get(key).map(|v| T::from_canonical_bytes(&v.bytes)).transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .range(prefix.to_owned()..)
            .map(|(k, _)| k.as_str())
            .take_while(move |k| k.starts_with(prefix))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply(&mut self, rwset: &ReadWriteSet, height: u64) {
        for w in &rwset.writes {
            self.entries.insert(w.key.clone(), VersionedValue { version: height, bytes: w.value.clone() });
        }
        self.last_block_height = Some(height);
    }
}
