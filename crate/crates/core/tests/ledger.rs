use std::time::Duration;

use ccs_core::datamodel::{CsrRecord, UserRecord};
use ccs_core::fixtures::{requester_key, Fixture};
use ccs_core::ledger::{
    decode_chain, encode_chain, read_chain_file, replay_state, verify_chain, verify_chain_bytes, verify_endorsements,
    ChainVerdict, EndorsementQuorumPolicy, LedgerError, Network, NodeFault, NodeResponse, WorldState,
};
use ccs_core::policy::{CertificationPolicy, DomainRule};
use ccs_core::workflow::{txs, Rejection};

fn bootstrapped() -> Fixture {
    let f = Fixture::new();
    f.install_policy(&CertificationPolicy::with_rules([DomainRule::new("x", 1, ["ra1"], false)])).unwrap();
    f.register_ra("ra1", ["x"]).unwrap();
    f.register_user("alice", "Alice", "alice@x").unwrap();
    f
}

fn csr_tx(f: &Fixture) -> (CsrRecord, ccs_core::ledger::Transaction) {
    let key = requester_key("alice");
    let csr = CsrRecord::create(&key, "Alice", "alice@x", f.clock.tick());
    let tx = txs::create_csr(&key, "alice", &csr, f.clock.tick());
    (csr, tx)
}

#[test]
fn honest_nodes_endorse_identically() {
    let f = bootstrapped();
    let (_, tx) = csr_tx(&f);
    let proposal = f.network.propose(&tx).unwrap();
    let digests: Vec<_> = proposal.endorsements().map(|e| e.readwrite_set_digest).collect();
    assert_eq!(digests.len(), 4);
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn corrupt_node_produces_divergent_endorsement() {
    let f = bootstrapped();
    f.network.set_fault(2, NodeFault::CorruptDigest);
    let (csr, tx) = csr_tx(&f);
    let proposal = f.network.propose(&tx).unwrap();
    let digests: Vec<_> = proposal.endorsements().map(|e| e.readwrite_set_digest).collect();
    assert_eq!(digests.len(), 4);
    let honest = digests[0];
    assert_eq!(digests.iter().filter(|d| **d == honest).count(), 3);
    assert_ne!(digests[2], honest);

    let block = f.network.commit(proposal).unwrap();
    assert_eq!(block.transactions[0].endorsements.len(), 3);
    assert!(block.transactions[0].endorsements.iter().all(|e| e.node_id != "node2"));
    assert!(f.csr(&csr.csr_id).is_some());
}

#[test]
fn non_permitted_endorsement_rejected_by_every_honest_node() {
    let f = bootstrapped();
    f.register_ra("ra9", ["x"]).unwrap();
    let csr = f.submit_csr("alice", "Alice", "alice@x").unwrap();
    let record = f.endorsement("ra9", &csr.csr_id, "Alice", "alice@x", "1234");
    let tx = txs::endorse_csr(&ccs_core::fixtures::ra_member_key("ra9"), &csr.csr_id, &record, f.clock.tick());
    let before = f.network.state();
    match f.network.propose(&tx) {
        Err(LedgerError::ChaincodeRejection(r)) => assert_eq!(r.code(), "not-permitted"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(f.network.state(), before);
}

#[test]
fn quorum_thresholds() {
    let f = bootstrapped();
    let (_, tx) = csr_tx(&f);
    let mut proposal = f.network.propose(&tx).unwrap();
    proposal.responses.truncate(2);
    assert_eq!(
        f.network.commit(proposal.clone()),
        Err(LedgerError::QuorumNotReached { matching: 2, required: 3 })
    );
    let mut proposal = f.network.propose(&tx).unwrap();
    proposal.responses.truncate(3);
    assert!(f.network.commit(proposal).is_ok());
}

#[test]
fn dropped_and_slow_nodes() {
    let f = bootstrapped();
    f.network.set_fault(0, NodeFault::Drop);
    f.network.set_fault(1, NodeFault::Delay(Duration::from_millis(20)));
    let (_, tx) = csr_tx(&f);
    let proposal = f.network.propose(&tx).unwrap();
    assert_eq!(proposal.responses.len(), 3);
    f.network.commit(proposal).unwrap();

    f.network.set_fault(2, NodeFault::Drop);
    let (_, tx) = csr_tx(&f);
    let proposal = f.network.propose(&tx).unwrap();
    assert!(matches!(f.network.commit(proposal), Err(LedgerError::QuorumNotReached { .. })));
}

#[test]
fn forged_writes_and_endorsed_rejections_do_not_commit() {
    let f = bootstrapped();
    f.network.set_fault(1, NodeFault::ForgeWrites);
    f.network.set_fault(3, NodeFault::EndorseRejections);
    let (csr, tx) = csr_tx(&f);
    f.network.submit(&tx).unwrap();
    assert!(f.network.state().keys().all(|k| !k.starts_with("forged/")));
    assert!(f.csr(&csr.csr_id).is_some());

    // a rejected transaction still gets the faulty node's endorsement, but
    // never a quorum
    let again = txs::create_csr(&requester_key("alice"), "alice", &csr, f.clock.tick());
    match f.network.submit(&again) {
        Err(LedgerError::ChaincodeRejection(Rejection::DuplicateCsr(_))) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn stale_read_forces_reproposal() {
    let f = bootstrapped();
    let (_, first) = csr_tx(&f);
    let (_, second) = csr_tx(&f);
    let p1 = f.network.propose(&first).unwrap();
    let p2 = f.network.propose(&second).unwrap();
    f.network.commit(p1).unwrap();
    assert_eq!(f.network.commit(p2), Err(LedgerError::StaleRead { key: "user/alice".into() }));
    f.network.submit(&second).unwrap();
    assert_eq!(f.user("alice").unwrap().csrs.len(), 2);
}

#[test]
fn duplicate_transaction_and_bad_signature() {
    let f = bootstrapped();
    let tx = txs::register_user(&f.admin, "bob", "Bob", "bob@x", f.clock.tick());
    let proposal = f.network.propose(&tx).unwrap();
    f.network.commit(proposal.clone()).unwrap();
    assert!(matches!(f.network.commit(proposal), Err(LedgerError::DuplicateTransaction(_))));

    let mut forged = txs::register_user(&f.admin, "carol", "Carol", "carol@x", f.clock.tick());
    forged.client_signature.bytes[0] ^= 1;
    assert!(matches!(f.network.propose(&forged), Err(LedgerError::MalformedTransaction(_))));
    let mut renamed = txs::register_user(&f.admin, "carol", "Carol", "carol@x", f.clock.tick());
    renamed.tx_id = "00".into();
    assert!(matches!(f.network.propose(&renamed), Err(LedgerError::MalformedTransaction(_))));
}

#[test]
fn query_isolation() {
    let f = bootstrapped();
    assert!(f.network.query_state::<UserRecord>("user/alice").is_ok());
    assert_eq!(f.network.query_state::<UserRecord>("user/nobody"), Err(LedgerError::NotFound("user/nobody".into())));
    let tx = txs::register_user(&f.admin, "bob", "Bob", "bob@x", f.clock.tick());
    let proposal = f.network.propose(&tx).unwrap();
    assert!(f.network.query_state::<UserRecord>("user/bob").is_err());
    f.network.commit(proposal).unwrap();
    assert!(f.network.query_state::<UserRecord>("user/bob").is_ok());
}

#[test]
fn chain_verification_and_replay() {
    let f = bootstrapped();
    for i in 0..2 {
        f.register_user(&format!("u{i}"), "U", &format!("u{i}@x")).unwrap();
    }
    let chain = f.network.chain();
    assert_eq!(chain.len(), 5);
    assert_eq!(verify_chain(&chain), ChainVerdict::Ok);
    let replayed = replay_state(&chain).unwrap();
    assert_eq!(replayed, f.network.state());
    assert_eq!(replayed.last_block_height(), 4);
    for i in 0..4 {
        assert_eq!(f.network.node_chain(i), chain);
        assert_eq!(f.network.node_state(i), replayed);
    }
    let quorum = f.network.config().quorum;
    assert!(verify_endorsements(&chain, &quorum, |id| f.network.node_public_key(id)).is_ok());

    let mut tampered = chain.clone();
    tampered[2].transactions[0].rwset.writes[0].value.push(b'!');
    assert_eq!(verify_chain(&tampered), ChainVerdict::FirstBadHeight(2));
    assert_eq!(replay_state(&tampered), Err(LedgerError::ChainInvalid(2)));

    let mut reordered = chain.clone();
    reordered.swap(3, 4);
    assert_eq!(verify_chain(&reordered), ChainVerdict::FirstBadHeight(3));

    let empty = replay_state(&[]).unwrap();
    assert_eq!(empty, WorldState::new());
    assert_eq!(empty.last_block_height(), -1);
}

#[test]
fn reordering_transactions_inside_a_block_breaks_its_hash() {
    let f = bootstrapped();
    let chain = f.network.chain();
    let entries = vec![chain[1].transactions[0].clone(), chain[2].transactions[0].clone()];
    let block = ccs_core::ledger::LedgerBlock::seal(0, ccs_core::Digest::ZERO, entries);
    let mut swapped = block.clone();
    swapped.transactions.swap(0, 1);
    assert!(block.hash_valid());
    assert_eq!(verify_chain(&[swapped]), ChainVerdict::FirstBadHeight(0));
}

#[test]
fn persistence_round_trip() {
    let dir = tempdir();
    let path = dir.join("chain.ccslog");
    let f = Fixture::new();
    let network = Network::open(f.network.config().clone(), &path).unwrap();
    network.submit(&txs::register_user(&f.admin, "a", "A", "a@x", f.clock.tick())).unwrap();
    network.submit(&txs::register_user(&f.admin, "b", "B", "b@x", f.clock.tick())).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, encode_chain(&network.chain()));
    assert_eq!(verify_chain_bytes(&bytes), ChainVerdict::Ok);
    assert_eq!(decode_chain(&bytes).blocks, network.chain());

    let reopened = Network::open(f.network.config().clone(), &path).unwrap();
    assert_eq!(reopened.state(), network.state());
    reopened.submit(&txs::register_user(&f.admin, "c", "C", "c@x", f.clock.tick())).unwrap();
    assert_eq!(read_chain_file(&path).unwrap().blocks.len(), 3);

    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 1);
    assert_eq!(verify_chain_bytes(&truncated), ChainVerdict::FirstBadHeight(1));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn quorum_policy_validation() {
    assert!(EndorsementQuorumPolicy::new(4, 3).is_ok());
    assert!(EndorsementQuorumPolicy::new(4, 2).is_err());
    assert!(EndorsementQuorumPolicy::new(4, 5).is_err());
    assert!(EndorsementQuorumPolicy::new(0, 0).is_err());
    assert!(EndorsementQuorumPolicy::new(1, 1).is_ok());
}

#[test]
fn rejection_codes_survive_single_faulty_node() {
    let f = bootstrapped();
    f.network.set_fault(0, NodeFault::EndorseRejections);
    let tx = txs::register_user(&f.admin, "alice", "Alice", "alice@x", f.clock.tick());
    match f.network.propose(&tx) {
        Err(LedgerError::ChaincodeRejection(r)) => assert_eq!(r.code(), "duplicate-id"),
        other => panic!("unexpected {other:?}"),
    }
    let responses = {
        f.network.set_fault(0, NodeFault::Honest);
        f.network.set_fault(1, NodeFault::EndorseRejections);
        f.network.set_fault(2, NodeFault::EndorseRejections);
        let p = f.network.propose(&tx).unwrap();
        p.responses
    };
    let rejected = responses.iter().filter(|r| matches!(r, NodeResponse::Rejected { .. })).count();
    assert_eq!(rejected, 2);
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("ccs-ledger-{}-{:?}", std::process::id(), std::thread::current().id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
