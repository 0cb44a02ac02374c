use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crate::canonical::Canonical;
use crate::crypto::{hash_parts, Digest, KeyPair};
use crate::workflow::{self, ReadWriteSet, Rejection, TrustAnchors, WriteEntry};

use super::persist;
use super::{
    replay_state, BlockEntry, EndorsementQuorumPolicy, LedgerBlock, LedgerError, NodeEndorsement, Transaction,
    WorldState,
};

/// Injectable misbehaviour of a simulated node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeFault {
    #[default]
    Honest,
    /// Signs a digest that does not match the computed write set.
    CorruptDigest,
    /// Adds a bogus write to the write set and signs it properly.
    ForgeWrites,
    /// Endorses transactions the chaincode rejects.
    EndorseRejections,
    /// Never answers.
    Drop,
    /// Answers after the given delay.
    Delay(Duration),
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub quorum: EndorsementQuorumPolicy,
    pub anchors: TrustAnchors,
    /// Node signing keys are derived from this label and the node index.
    pub node_seed: String,
    /// How long a proposal waits for node answers.
    pub response_timeout: Duration,
}

impl NetworkConfig {
    pub fn new(anchors: TrustAnchors) -> Self {
        NetworkConfig {
            quorum: EndorsementQuorumPolicy::default(),
            anchors,
            node_seed: "ccs-node".into(),
            response_timeout: Duration::from_secs(2),
        }
    }

    pub fn with_quorum(mut self, quorum: EndorsementQuorumPolicy) -> Self {
        self.quorum = quorum;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeResponse {
    Endorsed { endorsement: NodeEndorsement, rwset: ReadWriteSet },
    Rejected { node_id: String, reason: Rejection },
}

impl NodeResponse {
    pub fn node_id(&self) -> &str {
        match self {
            NodeResponse::Endorsed { endorsement, .. } => &endorsement.node_id,
            NodeResponse::Rejected { node_id, .. } => node_id,
        }
    }

    pub fn endorsement(&self) -> Option<&NodeEndorsement> {
        match self {
            NodeResponse::Endorsed { endorsement, .. } => Some(endorsement),
            NodeResponse::Rejected { .. } => None,
        }
    }
}

/// A transaction together with whatever node answers arrived in time, in
/// node order.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub tx: Transaction,
    pub responses: Vec<NodeResponse>,
}

impl Proposal {
    pub fn endorsements(&self) -> impl Iterator<Item = &NodeEndorsement> {
        self.responses.iter().filter_map(NodeResponse::endorsement)
    }
}

#[derive(Debug, Clone, Default)]
struct Replica {
    state: WorldState,
    chain: Vec<LedgerBlock>,
}

impl Replica {
    fn append(&mut self, block: &LedgerBlock) {
        for entry in &block.transactions {
            self.state.apply(&entry.rwset, block.height);
        }
        self.chain.push(block.clone());
    }
}

struct Node {
    id: String,
    key: KeyPair,
    fault: RwLock<NodeFault>,
    replica: RwLock<Replica>,
}

impl Node {
    fn respond(&self, tx: &Transaction, anchors: &TrustAnchors) -> Option<NodeResponse> {
        let fault = *self.fault.read().expect("fault lock");
        match fault {
            NodeFault::Drop => return None,
            NodeFault::Delay(d) => thread::sleep(d),
            _ => {}
        }
        let result = {
            let replica = self.replica.read().expect("replica lock");
            workflow::execute(tx, &replica.state, anchors)
        };
        let endorse = |rwset: ReadWriteSet, digest: Digest| NodeResponse::Endorsed {
            endorsement: NodeEndorsement::create(&self.id, &self.key, &tx.tx_id, digest),
            rwset,
        };
        let forged = WriteEntry { key: format!("forged/{}", self.id), value: tx.tx_id.as_bytes().to_vec() };
        Some(match (result, fault) {
            (Ok(rwset), NodeFault::CorruptDigest) => {
                let bad = hash_parts(&[b"corrupt", rwset.digest().as_bytes()]);
                endorse(rwset, bad)
            }
            (Ok(mut rwset), NodeFault::ForgeWrites) => {
                rwset.writes.push(forged);
                rwset.writes.sort_by(|a, b| a.key.cmp(&b.key));
                let digest = rwset.digest();
                endorse(rwset, digest)
            }
            (Ok(rwset), _) => {
                let digest = rwset.digest();
                endorse(rwset, digest)
            }
            (Err(_), NodeFault::EndorseRejections) => {
                let rwset = ReadWriteSet { reads: Vec::new(), writes: vec![forged] };
                let digest = rwset.digest();
                endorse(rwset, digest)
            }
            (Err(reason), _) => NodeResponse::Rejected { node_id: self.id.clone(), reason },
        })
    }
}

struct CommitLog {
    tx_ids: HashSet<String>,
    chain_file: Option<PathBuf>,
}

/// Handle to the simulated network: the endorsing nodes plus the trusted
/// sequencer that orders committed blocks.
///
/// Proposals run concurrently; commits are serialized.
pub struct Network {
    config: NetworkConfig,
    nodes: Vec<Arc<Node>>,
    committed: RwLock<Replica>,
    commit_log: Mutex<CommitLog>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, LedgerError> {
        Self::restore(config, Vec::new())
    }

    /// Builds a network whose nodes already hold `blocks`.
    pub fn restore(config: NetworkConfig, blocks: Vec<LedgerBlock>) -> Result<Self, LedgerError> {
        config.quorum.validate()?;
        let state = replay_state(&blocks)?;
        let replica = Replica { state, chain: blocks };
        let nodes = (0..config.quorum.total_nodes)
            .map(|i| {
                let id = format!("node{i}");
                Arc::new(Node {
                    key: KeyPair::from_label(&format!("{}/{id}", config.node_seed)),
                    id,
                    fault: RwLock::new(NodeFault::Honest),
                    replica: RwLock::new(replica.clone()),
                })
            })
            .collect();
        let tx_ids = replica
            .chain
            .iter()
            .flat_map(|b| b.transactions.iter().map(|e| e.transaction.tx_id.clone()))
            .collect();
        Ok(Network {
            config,
            nodes,
            committed: RwLock::new(replica),
            commit_log: Mutex::new(CommitLog { tx_ids, chain_file: None }),
        })
    }

    /// Opens (or creates) a persisted chain file and appends every future
    /// block to it.
    pub fn open(config: NetworkConfig, path: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let path = path.into();
        let blocks = if path.exists() {
            let file = persist::read_chain_file(&path).map_err(|e| LedgerError::Io(e.to_string()))?;
            if let Some(h) = file.first_bad {
                return Err(LedgerError::ChainInvalid(h));
            }
            file.blocks
        } else {
            Vec::new()
        };
        let network = Self::restore(config, blocks)?;
        network.commit_log.lock().expect("commit lock").chain_file = Some(path);
        Ok(network)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    pub fn node_public_key(&self, node_id: &str) -> Option<&[u8]> {
        self.nodes.iter().find(|n| n.id == node_id).map(|n| n.key.public_key.as_slice())
    }

    pub fn set_fault(&self, node_index: usize, fault: NodeFault) {
        *self.nodes[node_index].fault.write().expect("fault lock") = fault;
    }

    /// Sends `tx` to every node and collects the answers that arrive before
    /// the response timeout.
    pub fn propose(&self, tx: &Transaction) -> Result<Proposal, LedgerError> {
        tx.check_well_formed()?;
        let (sender, receiver) = mpsc::channel();
        for (i, node) in self.nodes.iter().enumerate() {
            let node = Arc::clone(node);
            let tx = tx.clone();
            let anchors = self.config.anchors.clone();
            let sender = sender.clone();
            thread::spawn(move || {
                if let Some(response) = node.respond(&tx, &anchors) {
                    let _ = sender.send((i, response));
                }
            });
        }
        drop(sender);

        let deadline = Instant::now() + self.config.response_timeout;
        let mut responses = BTreeMap::new();
        while responses.len() < self.nodes.len() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match receiver.recv_timeout(remaining) {
                Ok((i, response)) => {
                    responses.insert(i, response);
                }
                Err(_) => break,
            }
        }
        let responses: Vec<NodeResponse> = responses.into_values().collect();

        let mut rejections: BTreeMap<&Rejection, usize> = BTreeMap::new();
        for r in &responses {
            if let NodeResponse::Rejected { reason, .. } = r {
                *rejections.entry(reason).or_default() += 1;
            }
        }
        if let Some((reason, _)) = rejections.into_iter().find(|(_, n)| *n >= self.config.quorum.required_matching) {
            return Err(LedgerError::ChaincodeRejection(reason.clone()));
        }
        Ok(Proposal { tx: tx.clone(), responses })
    }

    /// Appends the proposal as a new block if a quorum of valid node
    /// endorsements agree on one write set and nothing it read has changed.
    pub fn commit(&self, proposal: Proposal) -> Result<LedgerBlock, LedgerError> {
        let mut log = self.commit_log.lock().expect("commit lock");
        let tx = proposal.tx;
        tx.check_well_formed()?;
        if log.tx_ids.contains(&tx.tx_id) {
            return Err(LedgerError::DuplicateTransaction(tx.tx_id));
        }

        let mut groups: BTreeMap<Digest, (Vec<NodeEndorsement>, Option<ReadWriteSet>)> = BTreeMap::new();
        let mut seen_nodes = HashSet::new();
        for response in proposal.responses {
            let NodeResponse::Endorsed { endorsement, rwset } = response else { continue };
            let valid = endorsement.tx_id == tx.tx_id
                && self.node_public_key(&endorsement.node_id).is_some_and(|k| endorsement.signature_valid(k));
            if !valid || !seen_nodes.insert(endorsement.node_id.clone()) {
                continue;
            }
            let group = groups.entry(endorsement.readwrite_set_digest).or_default();
            if group.1.is_none() && rwset.digest() == endorsement.readwrite_set_digest {
                group.1 = Some(rwset);
            }
            group.0.push(endorsement);
        }

        let required = self.config.quorum.required_matching;
        let best = groups.values().map(|(e, _)| e.len()).max().unwrap_or(0);
        let (mut endorsements, rwset) = groups
            .into_values()
            .find(|(e, rw)| e.len() >= required && rw.is_some())
            .map(|(e, rw)| (e, rw.expect("checked above")))
            .ok_or(LedgerError::QuorumNotReached { matching: best, required })?;
        endorsements.sort_by(|a, b| a.node_id.cmp(&b.node_id));

        let mut committed = self.committed.write().expect("ledger lock");
        for read in &rwset.reads {
            if committed.state.version(&read.key) != read.version {
                return Err(LedgerError::StaleRead { key: read.key.clone() });
            }
        }
        let height = committed.chain.len() as u64;
        let prev_hash = committed.chain.last().map_or(Digest::ZERO, |b| b.block_hash);
        let block = LedgerBlock::seal(height, prev_hash, vec![BlockEntry { transaction: tx, endorsements, rwset }]);

        if let Some(path) = &log.chain_file {
            persist::append_block(path, &block).map_err(|e| LedgerError::Io(e.to_string()))?;
        }
        committed.append(&block);
        for node in &self.nodes {
            node.replica.write().expect("replica lock").append(&block);
        }
        log.tx_ids.insert(block.transactions[0].transaction.tx_id.clone());
        Ok(block)
    }

    pub fn submit(&self, tx: &Transaction) -> Result<LedgerBlock, LedgerError> {
        self.commit(self.propose(tx)?)
    }

    /// Current committed value of `key`.
    pub fn query_state<T: Canonical>(&self, key: &str) -> Result<T, LedgerError> {
        let committed = self.committed.read().expect("ledger lock");
        committed
            .state
            .get::<T>(key)
            .map_err(|e| LedgerError::Io(format!("corrupt record at {key}: {e}")))?
            .ok_or_else(|| LedgerError::NotFound(key.to_owned()))
    }

    pub fn state(&self) -> WorldState {
        self.committed.read().expect("ledger lock").state.clone()
    }

    /// Runs `f` against the committed state without cloning it.
    pub fn with_state<R>(&self, f: impl FnOnce(&WorldState) -> R) -> R {
        f(&self.committed.read().expect("ledger lock").state)
    }

    pub fn chain(&self) -> Vec<LedgerBlock> {
        self.committed.read().expect("ledger lock").chain.clone()
    }

    pub fn height(&self) -> usize {
        self.committed.read().expect("ledger lock").chain.len()
    }

    pub fn node_state(&self, node_index: usize) -> WorldState {
        self.nodes[node_index].replica.read().expect("replica lock").state.clone()
    }

    pub fn node_chain(&self, node_index: usize) -> Vec<LedgerBlock> {
        self.nodes[node_index].replica.read().expect("replica lock").chain.clone()
    }
}
