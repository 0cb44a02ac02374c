//! Certification control system.
//!
//! Certificate signing requests are authorized only after a policy-defined
//! number of distinct, permitted RA members have endorsed them with
//! consistent identity data. Every step is a transaction on a simulated
//! multi-node ledger that commits only on an endorsement quorum, so the full
//! issuance history can be audited afterwards.

pub mod analytics;
pub mod canonical;
pub mod crypto;
pub mod datamodel;
pub mod fixtures;
pub mod hexbytes;
pub mod ledger;
pub mod policy;
pub mod time;
pub mod workflow;

pub use canonical::Canonical;
pub use crypto::{Digest, KeyPair, Signature};
pub use time::Timestamp;
