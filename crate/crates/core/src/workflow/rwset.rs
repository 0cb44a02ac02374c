use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::Canonical;
use crate::crypto::{hash, Digest};
use crate::hexbytes;
use crate::ledger::WorldState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadEntry {
    pub key: String,
    /// `None` when the key was absent at read time.
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteEntry {
    pub key: String,
    #[serde(with = "hexbytes")]
    pub value: Vec<u8>,
}

/// Keys and versions a chaincode execution read, and the records it wrote.
/// Both lists are sorted by key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadWriteSet {
    pub reads: Vec<ReadEntry>,
    pub writes: Vec<WriteEntry>,
}

impl ReadWriteSet {
    pub fn digest(&self) -> Digest {
        hash(&self.canonical_bytes())
    }
}

/// A snapshot view that records every key read and buffers writes.
pub(crate) struct Tracked<'a> {
    state: &'a WorldState,
    reads: RefCell<BTreeMap<String, Option<u64>>>,
    writes: BTreeMap<String, Vec<u8>>,
}

impl<'a> Tracked<'a> {
    pub(crate) fn new(state: &'a WorldState) -> Self {
        Tracked { state, reads: RefCell::new(BTreeMap::new()), writes: BTreeMap::new() }
    }

    pub(crate) fn read_raw(&self, key: &str) -> Option<&'a [u8]> {
        let entry = self.state.get_raw(key);
        self.reads.borrow_mut().entry(key.to_owned()).or_insert(entry.map(|v| v.version));
        entry.map(|v| v.bytes.as_slice())
    }

    pub(crate) fn exists(&self, key: &str) -> bool {
        self.writes.contains_key(key) || self.read_raw(key).is_some()
    }

    pub(crate) fn write<T: Canonical>(&mut self, key: String, record: &T) {
        self.writes.insert(key, record.canonical_bytes());
    }

    pub(crate) fn finish(self) -> ReadWriteSet {
        ReadWriteSet {
            reads: self.reads.into_inner().into_iter().map(|(key, version)| ReadEntry { key, version }).collect(),
            writes: self.writes.into_iter().map(|(key, value)| WriteEntry { key, value }).collect(),
        }
    }
}
