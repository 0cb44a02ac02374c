//! Simulated append-only ledger with endorsement-quorum commit.
//!
//! Clients submit signed [`Transaction`]s. Every node executes the chaincode
//! on its own snapshot and signs the digest of the resulting read/write set;
//! a transaction is appended as one [`LedgerBlock`] only when enough nodes
//! agree on the same digest. Blocks are hash-chained, so any later mutation
//! is detected by [`verify_chain`].

mod network;
mod persist;
mod state;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use network::{Network, NetworkConfig, NodeFault, NodeResponse, Proposal};
pub use persist::{append_block, decode_chain, encode_chain, read_chain_file, verify_chain_bytes, write_chain_file, ChainFile};
pub use state::{audit_key, cert_key, csr_key, ra_key, user_key, VersionedValue, WorldState, POLICY_KEY};

use crate::canonical::Canonical;
use crate::crypto::{self, fingerprint, hash_parts, Digest, KeyPair, Signature};
use crate::hexbytes;
use crate::time::Timestamp;
use crate::workflow::{ReadWriteSet, Rejection};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("malformed-transaction: {0}")]
    MalformedTransaction(String),
    #[error("chaincode-rejection: {0}")]
    ChaincodeRejection(Rejection),
    #[error("quorum-not-reached: best digest has {matching} of {required} required endorsements")]
    QuorumNotReached { matching: usize, required: usize },
    #[error("stale-read: {key} changed since proposal")]
    StaleRead { key: String },
    #[error("duplicate-transaction: {0}")]
    DuplicateTransaction(String),
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("chain-invalid: first bad height {0}")]
    ChainInvalid(u64),
    #[error("not-found: {0}")]
    NotFound(String),
    #[error("io: {0}")]
    Io(String),
}

impl LedgerError {
    pub fn code(&self) -> &str {
        match self {
            LedgerError::MalformedTransaction(_) => "malformed-transaction",
            LedgerError::ChaincodeRejection(r) => r.code(),
            LedgerError::QuorumNotReached { .. } => "quorum-not-reached",
            LedgerError::StaleRead { .. } => "stale-read",
            LedgerError::DuplicateTransaction(_) => "duplicate-transaction",
            LedgerError::InvalidConfig(_) => "invalid-config",
            LedgerError::ChainInvalid(_) => "chain-invalid",
            LedgerError::NotFound(_) => "not-found",
            LedgerError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxType {
    #[serde(rename = "createCSR")]
    CreateCsr,
    #[serde(rename = "endorseCSR")]
    EndorseCsr,
    #[serde(rename = "issueCertificate")]
    IssueCertificate,
    #[serde(rename = "registerUser")]
    RegisterUser,
    #[serde(rename = "registerRAMember")]
    RegisterRaMember,
    #[serde(rename = "policyUpdate")]
    PolicyUpdate,
}

impl TxType {
    pub const ALL: [TxType; 6] = [
        TxType::CreateCsr,
        TxType::EndorseCsr,
        TxType::IssueCertificate,
        TxType::RegisterUser,
        TxType::RegisterRaMember,
        TxType::PolicyUpdate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TxType::CreateCsr => "createCSR",
            TxType::EndorseCsr => "endorseCSR",
            TxType::IssueCertificate => "issueCertificate",
            TxType::RegisterUser => "registerUser",
            TxType::RegisterRaMember => "registerRAMember",
            TxType::PolicyUpdate => "policyUpdate",
        }
    }
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a client signs when submitting a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSigningBody {
    pub tx_type: TxType,
    #[serde(with = "hexbytes")]
    pub payload: Vec<u8>,
    pub client_key_id: String,
    pub submitted_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: String,
    pub tx_type: TxType,
    /// Canonical serialization of the argument record.
    #[serde(with = "hexbytes")]
    pub payload: Vec<u8>,
    #[serde(with = "hexbytes")]
    pub client_public_key: Vec<u8>,
    pub client_signature: Signature,
    pub submitted_at: Timestamp,
}

pub fn compute_tx_id(tx_type: TxType, payload: &[u8], client_key_id: &str) -> String {
    hash_parts(&[tx_type.as_str().as_bytes(), payload, client_key_id.as_bytes()]).to_hex()
}

impl Transaction {
    pub fn signing_bytes(tx_type: TxType, payload: &[u8], client_public_key: &[u8], submitted_at: Timestamp) -> Vec<u8> {
        TxSigningBody {
            tx_type,
            payload: payload.to_vec(),
            client_key_id: fingerprint(client_public_key),
            submitted_at,
        }
        .canonical_bytes()
    }

    pub fn new<P: Canonical>(tx_type: TxType, payload: &P, client: &KeyPair, submitted_at: Timestamp) -> Self {
        let payload = payload.canonical_bytes();
        let signature = client.sign(&Self::signing_bytes(tx_type, &payload, &client.public_key, submitted_at));
        Self::from_signed_parts(tx_type, payload, client.public_key.clone(), submitted_at, signature)
    }

    /// Assembles a transaction whose signature was produced elsewhere; use
    /// [`Transaction::check_well_formed`] before trusting it.
    pub fn from_signed_parts(
        tx_type: TxType,
        payload: Vec<u8>,
        client_public_key: Vec<u8>,
        submitted_at: Timestamp,
        client_signature: Signature,
    ) -> Self {
        Transaction {
            tx_id: compute_tx_id(tx_type, &payload, &fingerprint(&client_public_key)),
            tx_type,
            payload,
            client_public_key,
            client_signature,
            submitted_at,
        }
    }

    pub fn client_key_id(&self) -> String {
        fingerprint(&self.client_public_key)
    }

    pub fn check_well_formed(&self) -> Result<(), LedgerError> {
        if self.tx_id != compute_tx_id(self.tx_type, &self.payload, &self.client_key_id()) {
            return Err(LedgerError::MalformedTransaction("tx_id does not match contents".into()));
        }
        let msg = Self::signing_bytes(self.tx_type, &self.payload, &self.client_public_key, self.submitted_at);
        if !crypto::verify(&self.client_public_key, &msg, &self.client_signature) {
            return Err(LedgerError::MalformedTransaction("client signature does not verify".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EndorsementSigningBody<'a> {
    node_id: &'a str,
    tx_id: &'a str,
    readwrite_set_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEndorsement {
    pub node_id: String,
    pub tx_id: String,
    pub readwrite_set_digest: Digest,
    pub node_signature: Signature,
}

impl NodeEndorsement {
    fn signing_bytes(node_id: &str, tx_id: &str, digest: Digest) -> Vec<u8> {
        crate::canonical::to_canonical(&EndorsementSigningBody { node_id, tx_id, readwrite_set_digest: digest })
            .expect("endorsement body is encodable")
    }

    pub fn create(node_id: &str, key: &KeyPair, tx_id: &str, digest: Digest) -> Self {
        NodeEndorsement {
            node_id: node_id.to_owned(),
            tx_id: tx_id.to_owned(),
            readwrite_set_digest: digest,
            node_signature: key.sign(&Self::signing_bytes(node_id, tx_id, digest)),
        }
    }

    pub fn signature_valid(&self, node_public_key: &[u8]) -> bool {
        crypto::verify(
            node_public_key,
            &Self::signing_bytes(&self.node_id, &self.tx_id, self.readwrite_set_digest),
            &self.node_signature,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorsementQuorumPolicy {
    pub total_nodes: usize,
    pub required_matching: usize,
}

impl Default for EndorsementQuorumPolicy {
    fn default() -> Self {
        EndorsementQuorumPolicy { total_nodes: 4, required_matching: 3 }
    }
}

impl EndorsementQuorumPolicy {
    pub fn new(total_nodes: usize, required_matching: usize) -> Result<Self, LedgerError> {
        let q = EndorsementQuorumPolicy { total_nodes, required_matching };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.total_nodes == 0 {
            return Err(LedgerError::InvalidConfig("total_nodes must be positive".into()));
        }
        if self.required_matching > self.total_nodes {
            return Err(LedgerError::InvalidConfig(format!(
                "quorum {} exceeds node count {}",
                self.required_matching, self.total_nodes
            )));
        }
        if self.required_matching < self.total_nodes / 2 + 1 {
            return Err(LedgerError::InvalidConfig(format!(
                "quorum {} is not a strict majority of {} nodes",
                self.required_matching, self.total_nodes
            )));
        }
        Ok(())
    }
}

/// One committed transaction together with its endorsements and the write
/// set the endorsers agreed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub transaction: Transaction,
    pub endorsements: Vec<NodeEndorsement>,
    pub rwset: ReadWriteSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    pub height: u64,
    pub prev_hash: Digest,
    pub transactions: Vec<BlockEntry>,
    pub block_hash: Digest,
}

impl LedgerBlock {
    pub fn compute_hash(height: u64, prev_hash: &Digest, transactions: &[BlockEntry]) -> Digest {
        hash_parts(&[&height.to_be_bytes(), prev_hash.as_bytes(), &crate::canonical::to_canonical(transactions).expect("block entries are encodable")])
    }

    pub fn seal(height: u64, prev_hash: Digest, transactions: Vec<BlockEntry>) -> Self {
        let block_hash = Self::compute_hash(height, &prev_hash, &transactions);
        LedgerBlock { height, prev_hash, transactions, block_hash }
    }

    pub fn hash_valid(&self) -> bool {
        self.block_hash == Self::compute_hash(self.height, &self.prev_hash, &self.transactions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVerdict {
    Ok,
    FirstBadHeight(u64),
}

impl ChainVerdict {
    pub fn is_ok(self) -> bool {
        self == ChainVerdict::Ok
    }
}

pub fn verify_chain(blocks: &[LedgerBlock]) -> ChainVerdict {
    let mut expected_prev = Digest::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        let height = i as u64;
        if block.height != height || block.prev_hash != expected_prev || !block.hash_valid() {
            return ChainVerdict::FirstBadHeight(height);
        }
        expected_prev = block.block_hash;
    }
    ChainVerdict::Ok
}

/// Rebuilds world state by applying every committed write set in order.
pub fn replay_state(blocks: &[LedgerBlock]) -> Result<WorldState, LedgerError> {
    if let ChainVerdict::FirstBadHeight(h) = verify_chain(blocks) {
        return Err(LedgerError::ChainInvalid(h));
    }
    let mut state = WorldState::new();
    for block in blocks {
        for entry in &block.transactions {
            state.apply(&entry.rwset, block.height);
        }
    }
    Ok(state)
}

/// Checks that every block entry carries a quorum of valid node endorsements
/// over its write set. `node_key` maps a node id to its registered key.
pub fn verify_endorsements<'k>(
    blocks: &[LedgerBlock],
    quorum: &EndorsementQuorumPolicy,
    node_key: impl Fn(&str) -> Option<&'k [u8]>,
) -> ChainVerdict {
    for block in blocks {
        for entry in &block.transactions {
            let digest = entry.rwset.digest();
            let mut nodes: Vec<&str> = entry
                .endorsements
                .iter()
                .filter(|e| e.tx_id == entry.transaction.tx_id && e.readwrite_set_digest == digest)
                .filter(|e| node_key(&e.node_id).is_some_and(|k| e.signature_valid(k)))
                .map(|e| e.node_id.as_str())
                .collect();
            nodes.sort_unstable();
            nodes.dedup();
            if nodes.len() < quorum.required_matching || entry.transaction.check_well_formed().is_err() {
                return ChainVerdict::FirstBadHeight(block.height);
            }
        }
    }
    ChainVerdict::Ok
}
