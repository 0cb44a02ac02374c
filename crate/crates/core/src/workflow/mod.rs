//! Chaincode: the deterministic business logic every node runs.
//!
//! `execute` is a pure function of the transaction, the node's state
//! snapshot and the trust anchors (admin and CA keys). It returns the
//! read/write set the node then endorses, or a rejection. Rejections carry
//! stable reason codes so that honest nodes reject identically.

mod audit;
mod rwset;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use audit::{audit_certificate, AuditOutcome, TrailEntry, ValidationHistory};
pub use rwset::{ReadEntry, ReadWriteSet, WriteEntry};

use crate::canonical::Canonical;
use crate::crypto::KeyPair;
use crate::datamodel::{
    domain_of, validate_record, CertificateRecord, CsrRecord, RaEndorsementRecord, RaMemberRecord, RecordRef,
    UserRecord,
};
use crate::hexbytes;
use crate::ledger::{audit_key, cert_key, csr_key, ra_key, user_key, Transaction, TxType, WorldState, POLICY_KEY};
use crate::policy::{self, CertificationPolicy, Plausibility, PolicyError};
use crate::time::Timestamp;
use rwset::Tracked;

/// Public keys of the identities the chaincode trusts for bootstrap and
/// issuance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustAnchors {
    #[serde(with = "hexbytes")]
    pub admin_public_key: Vec<u8>,
    #[serde(with = "hexbytes")]
    pub ca_public_key: Vec<u8>,
}

impl TrustAnchors {
    pub fn new(admin: &KeyPair, ca: &KeyPair) -> Self {
        TrustAnchors { admin_public_key: admin.public_key.clone(), ca_public_key: ca.public_key.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rejection {
    MalformedPayload(String),
    InvalidRecord(String),
    NotAdmin,
    NotCa,
    /// The submitting key is not the key the payload says acts.
    SubmitterMismatch,
    DuplicateId(String),
    UnknownUser(String),
    UnknownCsr(String),
    DuplicateCsr(String),
    ProofOfPossessionFailed,
    EmailMismatch,
    AlreadyAuthorized,
    NotPermitted(String),
    DuplicateEndorser(String),
    InvalidEndorsementSignature,
    NoRuleForDomain(String),
    CsrNotAuthorized,
    DuplicateCertificate,
    InvalidCaSignature,
    SubjectMismatch,
    InvalidPolicy(String),
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::MalformedPayload(_) => "malformed-payload",
            Rejection::InvalidRecord(_) => "invalid-record",
            Rejection::NotAdmin => "not-admin",
            Rejection::NotCa => "not-ca",
            Rejection::SubmitterMismatch => "submitter-mismatch",
            Rejection::DuplicateId(_) => "duplicate-id",
            Rejection::UnknownUser(_) => "unknown-user",
            Rejection::UnknownCsr(_) => "unknown-csr",
            Rejection::DuplicateCsr(_) => "duplicate-csr",
            Rejection::ProofOfPossessionFailed => "proof-of-possession-failed",
            Rejection::EmailMismatch => "email-mismatch",
            Rejection::AlreadyAuthorized => "already-authorized",
            Rejection::NotPermitted(_) => "not-permitted",
            Rejection::DuplicateEndorser(_) => "duplicate-endorser",
            Rejection::InvalidEndorsementSignature => "invalid-endorsement-signature",
            Rejection::NoRuleForDomain(_) => "no-rule-for-domain",
            Rejection::CsrNotAuthorized => "csr-not-authorized",
            Rejection::DuplicateCertificate => "duplicate-certificate",
            Rejection::InvalidCaSignature => "invalid-ca-signature",
            Rejection::SubjectMismatch => "subject-mismatch",
            Rejection::InvalidPolicy(_) => "invalid-policy",
        }
    }

    fn detail(&self) -> Option<&str> {
        match self {
            Rejection::MalformedPayload(d)
            | Rejection::InvalidRecord(d)
            | Rejection::DuplicateId(d)
            | Rejection::UnknownUser(d)
            | Rejection::UnknownCsr(d)
            | Rejection::DuplicateCsr(d)
            | Rejection::NotPermitted(d)
            | Rejection::DuplicateEndorser(d)
            | Rejection::NoRuleForDomain(d)
            | Rejection::InvalidPolicy(d) => Some(d),
            _ => None,
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.detail() {
            Some(d) => write!(f, "{}: {d}", self.code()),
            None => f.write_str(self.code()),
        }
    }
}

impl From<PolicyError> for Rejection {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NoRuleForDomain(d) => Rejection::NoRuleForDomain(d),
            PolicyError::Invalid(d) => Rejection::InvalidPolicy(d),
        }
    }
}

// Transaction payloads, one per tx type.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterUser {
    pub user_id: String,
    pub name: String,
    pub email: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateCsr {
    pub user_id: String,
    pub csr: CsrRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorseCsr {
    pub csr_id: String,
    pub endorsement: RaEndorsementRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueCertificate {
    pub certificate: CertificateRecord,
}

/// Where an indexed CSR or certificate lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordIndex {
    pub user_id: String,
    pub csr_id: String,
    pub cert_serial: Option<String>,
}

pub mod txs {
    //! Builders for signed transactions.
    use super::*;

    pub fn register_user(admin: &KeyPair, user_id: &str, name: &str, email: &str, at: Timestamp) -> Transaction {
        let payload = RegisterUser { user_id: user_id.into(), name: name.into(), email: email.into() };
        Transaction::new(TxType::RegisterUser, &payload, admin, at)
    }

    pub fn register_ra_member(admin: &KeyPair, member: &RaMemberRecord, at: Timestamp) -> Transaction {
        Transaction::new(TxType::RegisterRaMember, member, admin, at)
    }

    pub fn policy_update(admin: &KeyPair, policy: &CertificationPolicy, at: Timestamp) -> Transaction {
        Transaction::new(TxType::PolicyUpdate, policy, admin, at)
    }

    pub fn create_csr(requester: &KeyPair, user_id: &str, csr: &CsrRecord, at: Timestamp) -> Transaction {
        let payload = CreateCsr { user_id: user_id.into(), csr: csr.clone() };
        Transaction::new(TxType::CreateCsr, &payload, requester, at)
    }

    pub fn endorse_csr(ra: &KeyPair, csr_id: &str, endorsement: &RaEndorsementRecord, at: Timestamp) -> Transaction {
        let payload = EndorseCsr { csr_id: csr_id.into(), endorsement: endorsement.clone() };
        Transaction::new(TxType::EndorseCsr, &payload, ra, at)
    }

    pub fn issue_certificate(ca: &KeyPair, certificate: &CertificateRecord, at: Timestamp) -> Transaction {
        Transaction::new(TxType::IssueCertificate, &IssueCertificate { certificate: certificate.clone() }, ca, at)
    }
}

fn decode_payload<T: Canonical>(tx: &Transaction) -> Result<T, Rejection> {
    T::from_canonical_bytes(&tx.payload).map_err(|e| Rejection::MalformedPayload(e.to_string()))
}

fn load<T: Canonical>(view: &Tracked<'_>, key: &str) -> Option<T> {
    // State only ever holds records written by chaincode, so decoding succeeds.
    view.read_raw(key).and_then(|bytes| T::from_canonical_bytes(bytes).ok())
}

fn require_admin(tx: &Transaction, anchors: &TrustAnchors) -> Result<(), Rejection> {
    if tx.client_public_key != anchors.admin_public_key {
        return Err(Rejection::NotAdmin);
    }
    Ok(())
}

fn invalid(violations: Vec<String>) -> Result<(), Rejection> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Rejection::InvalidRecord(violations.join("; ")))
    }
}

/// Dispatches `tx` to its handler against `snapshot`.
pub fn execute(tx: &Transaction, snapshot: &WorldState, anchors: &TrustAnchors) -> Result<ReadWriteSet, Rejection> {
    let mut view = Tracked::new(snapshot);
    match tx.tx_type {
        TxType::RegisterUser => handle_register_user(tx, &mut view, anchors)?,
        TxType::RegisterRaMember => handle_register_ra_member(tx, &mut view, anchors)?,
        TxType::PolicyUpdate => handle_policy_update(tx, &mut view, anchors)?,
        TxType::CreateCsr => handle_create_csr(tx, &mut view)?,
        TxType::EndorseCsr => handle_endorse_csr(tx, &mut view)?,
        TxType::IssueCertificate => handle_issue_certificate(tx, &mut view, anchors)?,
    }
    Ok(view.finish())
}

fn handle_register_user(tx: &Transaction, view: &mut Tracked<'_>, anchors: &TrustAnchors) -> Result<(), Rejection> {
    require_admin(tx, anchors)?;
    let p: RegisterUser = decode_payload(tx)?;
    let user = UserRecord::new(p.user_id, p.name, p.email);
    invalid(validate_record(RecordRef::User(&user)))?;
    let key = user_key(&user.user_id);
    if view.exists(&key) {
        return Err(Rejection::DuplicateId(user.user_id));
    }
    view.write(key, &user);
    Ok(())
}

fn handle_register_ra_member(tx: &Transaction, view: &mut Tracked<'_>, anchors: &TrustAnchors) -> Result<(), Rejection> {
    require_admin(tx, anchors)?;
    let member: RaMemberRecord = decode_payload(tx)?;
    invalid(validate_record(RecordRef::RaMember(&member)))?;
    let key = ra_key(&member.ra_member_id);
    if view.exists(&key) {
        return Err(Rejection::DuplicateId(member.ra_member_id));
    }
    view.write(key, &member);
    Ok(())
}

fn handle_policy_update(tx: &Transaction, view: &mut Tracked<'_>, anchors: &TrustAnchors) -> Result<(), Rejection> {
    require_admin(tx, anchors)?;
    let policy: CertificationPolicy = decode_payload(tx)?;
    policy.validate()?;
    // Read the current policy so concurrent updates conflict at commit.
    view.exists(POLICY_KEY);
    view.write(POLICY_KEY.to_owned(), &policy);
    Ok(())
}

fn handle_create_csr(tx: &Transaction, view: &mut Tracked<'_>) -> Result<(), Rejection> {
    let CreateCsr { user_id, csr } = decode_payload(tx)?;
    if tx.client_public_key != csr.subject_public_key {
        return Err(Rejection::SubmitterMismatch);
    }
    if !csr.endorsements.is_empty() || !csr.conflicts.is_empty() || csr.authorized {
        return Err(Rejection::InvalidRecord("a new CSR must be unauthorized and unendorsed".into()));
    }
    if domain_of(&csr.subject_email).is_none() {
        return Err(Rejection::InvalidRecord(format!("subject email {:?} must contain one '@'", csr.subject_email)));
    }
    invalid(validate_record(RecordRef::Csr(&csr)))?;
    if !csr.proof_of_possession_valid() {
        return Err(Rejection::ProofOfPossessionFailed);
    }
    let ukey = user_key(&user_id);
    let mut user: UserRecord = load(view, &ukey).ok_or_else(|| Rejection::UnknownUser(user_id.clone()))?;
    if csr.subject_email != user.email {
        return Err(Rejection::EmailMismatch);
    }
    let ckey = csr_key(&csr.csr_id);
    if view.exists(&ckey) {
        return Err(Rejection::DuplicateCsr(csr.csr_id));
    }
    view.write(ckey, &RecordIndex { user_id, csr_id: csr.csr_id.clone(), cert_serial: None });
    user.csrs.push(csr);
    view.write(ukey, &user);
    Ok(())
}

fn handle_endorse_csr(tx: &Transaction, view: &mut Tracked<'_>) -> Result<(), Rejection> {
    let EndorseCsr { csr_id, endorsement } = decode_payload(tx)?;
    let index: RecordIndex = load(view, &csr_key(&csr_id)).ok_or_else(|| Rejection::UnknownCsr(csr_id.clone()))?;
    let ukey = user_key(&index.user_id);
    let mut user: UserRecord = load(view, &ukey).ok_or_else(|| Rejection::UnknownCsr(csr_id.clone()))?;
    let policy: CertificationPolicy =
        load(view, POLICY_KEY).ok_or_else(|| Rejection::NoRuleForDomain("no policy installed".into()))?;
    let csr = user.csr_mut(&csr_id).ok_or_else(|| Rejection::UnknownCsr(csr_id.clone()))?;
    if csr.authorized {
        return Err(Rejection::AlreadyAuthorized);
    }

    let ra_id = endorsement.ra_member_id.clone();
    let member: Option<RaMemberRecord> = load(view, &ra_key(&ra_id));
    let permitted = policy::is_permitted(&policy, &ra_id, csr)?
        && member.as_ref().is_some_and(|m| m.permitted_domains.contains(&csr.domain));
    let Some(member) = member.filter(|_| permitted) else {
        return Err(Rejection::NotPermitted(format!("{ra_id} may not endorse CSRs of {}", csr.domain)));
    };
    if tx.client_public_key != member.public_key {
        return Err(Rejection::SubmitterMismatch);
    }
    if csr.endorsed_by(&ra_id) {
        return Err(Rejection::DuplicateEndorser(ra_id));
    }
    if !endorsement.signature_valid(&csr_id, &member.public_key) {
        return Err(Rejection::InvalidEndorsementSignature);
    }
    let record = RecordRef::Endorsement { record: &endorsement, csr_id: &csr_id, ra_public_key: &member.public_key };
    invalid(validate_record(record))?;

    csr.endorsements.push(endorsement);
    let rule = policy::resolve_rule(&policy, &csr.domain)?;
    if rule.plausibility_checks_enabled {
        if let Plausibility::Conflicts(found) = policy::plausibility_check(&csr.endorsements, csr) {
            for conflict in found {
                if !csr.conflicts.contains(&conflict) {
                    csr.conflicts.push(conflict);
                }
            }
        }
    }
    csr.authorized = policy::evaluate_authorization(&policy, csr)?;
    view.write(ukey, &user);
    Ok(())
}

fn handle_issue_certificate(tx: &Transaction, view: &mut Tracked<'_>, anchors: &TrustAnchors) -> Result<(), Rejection> {
    if tx.client_public_key != anchors.ca_public_key {
        return Err(Rejection::NotCa);
    }
    let IssueCertificate { certificate } = decode_payload(tx)?;
    invalid(validate_record(RecordRef::Certificate(&certificate)))?;
    if !certificate.signature_valid(&anchors.ca_public_key) {
        return Err(Rejection::InvalidCaSignature);
    }
    let csr_id = certificate.csr_id.clone();
    let index: RecordIndex = load(view, &csr_key(&csr_id)).ok_or_else(|| Rejection::UnknownCsr(csr_id.clone()))?;
    let ukey = user_key(&index.user_id);
    let mut user: UserRecord = load(view, &ukey).ok_or_else(|| Rejection::UnknownCsr(csr_id.clone()))?;
    let csr = user.csr(&csr_id).ok_or_else(|| Rejection::UnknownCsr(csr_id.clone()))?;
    if !csr.authorized {
        return Err(Rejection::CsrNotAuthorized);
    }
    let serial_key = cert_key(&certificate.cert_serial);
    if user.certificates.iter().any(|c| c.csr_id == csr_id) || view.exists(&serial_key) {
        return Err(Rejection::DuplicateCertificate);
    }
    if !certificate.subject_matches(csr) {
        return Err(Rejection::SubjectMismatch);
    }
    let location = RecordIndex {
        user_id: index.user_id,
        csr_id: csr_id.clone(),
        cert_serial: Some(certificate.cert_serial.clone()),
    };
    view.write(serial_key, &location);
    view.write(audit_key(&certificate.audit_digest().to_hex()), &location);
    view.write(csr_key(&csr_id), &location);
    user.certificates.push(certificate);
    view.write(ukey, &user);
    Ok(())
}
