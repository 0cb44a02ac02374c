//! User-centered records of the certificate issuance process.
//!
//! A [`UserRecord`] owns its CSRs and certificates; each [`CsrRecord`] carries
//! the ordered list of RA endorsements collected for it together with the
//! `authorized` flag. Everything that gets signed is signed over the canonical
//! serialization of a dedicated body struct, never over ad-hoc formatting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::canonical::Canonical;
use crate::crypto::{self, hash_parts, KeyPair, Signature};
use crate::hexbytes;
use crate::time::Timestamp;

/// Maximum length of the noted identity-document serial suffix.
pub const SERIAL_SUFFIX_MAX: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: String,
    pub name: String,
    pub email: String,
    pub csrs: Vec<CsrRecord>,
    pub certificates: Vec<CertificateRecord>,
}

impl UserRecord {
    pub fn new(user_id: impl Into<String>, name: impl Into<String>, email: impl Into<String>) -> Self {
        UserRecord {
            user_id: user_id.into(),
            name: name.into(),
            email: email.into(),
            csrs: Vec::new(),
            certificates: Vec::new(),
        }
    }

    pub fn csr(&self, csr_id: &str) -> Option<&CsrRecord> {
        self.csrs.iter().find(|c| c.csr_id == csr_id)
    }

    pub fn csr_mut(&mut self, csr_id: &str) -> Option<&mut CsrRecord> {
        self.csrs.iter_mut().find(|c| c.csr_id == csr_id)
    }

    pub fn certificate(&self, serial: &str) -> Option<&CertificateRecord> {
        self.certificates.iter().find(|c| c.cert_serial == serial)
    }
}

/// The identity claims of a request. Both the proof of possession and the
/// CSR id are computed from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsrSubject {
    pub subject_name: String,
    pub subject_email: String,
    #[serde(with = "hexbytes")]
    pub subject_public_key: Vec<u8>,
    pub domain: String,
    pub created_at: Timestamp,
}

impl CsrSubject {
    /// `hex(hash(subject fields ∥ created_at ∥ public key))`, first 16 bytes.
    pub fn csr_id(&self) -> String {
        let digest = hash_parts(&[
            &self.canonical_bytes(),
            self.created_at.to_rfc3339().as_bytes(),
            &self.subject_public_key,
        ]);
        hex::encode(&digest.as_bytes()[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsrRecord {
    pub csr_id: String,
    pub subject_name: String,
    pub subject_email: String,
    #[serde(with = "hexbytes")]
    pub subject_public_key: Vec<u8>,
    pub domain: String,
    pub requester_signature: Signature,
    pub endorsements: Vec<RaEndorsementRecord>,
    /// Plausibility conflicts observed so far; kept for accountability.
    pub conflicts: Vec<PlausibilityConflict>,
    pub authorized: bool,
    pub created_at: Timestamp,
}

impl CsrRecord {
    /// Builds a fresh, unauthorized CSR signed with the requester's key (the
    /// key being certified).
    pub fn create(requester: &KeyPair, name: &str, email: &str, created_at: Timestamp) -> Self {
        let subject = CsrSubject {
            subject_name: name.to_owned(),
            subject_email: email.to_owned(),
            subject_public_key: requester.public_key.clone(),
            domain: domain_of(email).unwrap_or_default().to_owned(),
            created_at,
        };
        CsrRecord {
            csr_id: subject.csr_id(),
            requester_signature: requester.sign(&subject.canonical_bytes()),
            subject_name: subject.subject_name,
            subject_email: subject.subject_email,
            subject_public_key: subject.subject_public_key,
            domain: subject.domain,
            endorsements: Vec::new(),
            conflicts: Vec::new(),
            authorized: false,
            created_at,
        }
    }

    pub fn subject(&self) -> CsrSubject {
        CsrSubject {
            subject_name: self.subject_name.clone(),
            subject_email: self.subject_email.clone(),
            subject_public_key: self.subject_public_key.clone(),
            domain: self.domain.clone(),
            created_at: self.created_at,
        }
    }

    pub fn proof_of_possession_valid(&self) -> bool {
        crypto::verify(&self.subject_public_key, &self.subject().canonical_bytes(), &self.requester_signature)
    }

    pub fn endorsed_by(&self, ra_member_id: &str) -> bool {
        self.endorsements.iter().any(|e| e.ra_member_id == ra_member_id)
    }
}

/// Everything an RA member attests to, plus the CSR it refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorsementBody {
    pub csr_id: String,
    pub ra_member_id: String,
    pub verified_name: String,
    pub verified_email: String,
    pub id_document_serial_suffix: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaEndorsementRecord {
    pub ra_member_id: String,
    pub verified_name: String,
    pub verified_email: String,
    pub id_document_serial_suffix: String,
    pub timestamp: Timestamp,
    pub signature: Signature,
}

impl RaEndorsementRecord {
    pub fn create(ra_key: &KeyPair, body: EndorsementBody) -> Self {
        let signature = ra_key.sign(&body.canonical_bytes());
        RaEndorsementRecord {
            ra_member_id: body.ra_member_id,
            verified_name: body.verified_name,
            verified_email: body.verified_email,
            id_document_serial_suffix: body.id_document_serial_suffix,
            timestamp: body.timestamp,
            signature,
        }
    }

    pub fn body(&self, csr_id: &str) -> EndorsementBody {
        EndorsementBody {
            csr_id: csr_id.to_owned(),
            ra_member_id: self.ra_member_id.clone(),
            verified_name: self.verified_name.clone(),
            verified_email: self.verified_email.clone(),
            id_document_serial_suffix: self.id_document_serial_suffix.clone(),
            timestamp: self.timestamp,
        }
    }

    pub fn signature_valid(&self, csr_id: &str, ra_public_key: &[u8]) -> bool {
        crypto::verify(ra_public_key, &self.body(csr_id).canonical_bytes(), &self.signature)
    }
}

/// Fields of a certificate covered by the CA signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateBody {
    pub cert_serial: String,
    pub csr_id: String,
    pub subject_name: String,
    pub subject_email: String,
    #[serde(with = "hexbytes")]
    pub subject_public_key: Vec<u8>,
    pub issued_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateRecord {
    pub cert_serial: String,
    pub csr_id: String,
    pub subject_name: String,
    pub subject_email: String,
    #[serde(with = "hexbytes")]
    pub subject_public_key: Vec<u8>,
    pub issued_at: Timestamp,
    pub ca_signature: Signature,
}

impl CertificateRecord {
    pub fn sign(ca_key: &KeyPair, body: CertificateBody) -> Self {
        let ca_signature = ca_key.sign(&body.canonical_bytes());
        CertificateRecord {
            cert_serial: body.cert_serial,
            csr_id: body.csr_id,
            subject_name: body.subject_name,
            subject_email: body.subject_email,
            subject_public_key: body.subject_public_key,
            issued_at: body.issued_at,
            ca_signature,
        }
    }

    /// Signs a certificate for `csr` with subject fields copied verbatim.
    pub fn issue_for(ca_key: &KeyPair, csr: &CsrRecord, cert_serial: &str, issued_at: Timestamp) -> Self {
        Self::sign(
            ca_key,
            CertificateBody {
                cert_serial: cert_serial.to_owned(),
                csr_id: csr.csr_id.clone(),
                subject_name: csr.subject_name.clone(),
                subject_email: csr.subject_email.clone(),
                subject_public_key: csr.subject_public_key.clone(),
                issued_at,
            },
        )
    }

    pub fn body(&self) -> CertificateBody {
        CertificateBody {
            cert_serial: self.cert_serial.clone(),
            csr_id: self.csr_id.clone(),
            subject_name: self.subject_name.clone(),
            subject_email: self.subject_email.clone(),
            subject_public_key: self.subject_public_key.clone(),
            issued_at: self.issued_at,
        }
    }

    pub fn signature_valid(&self, ca_public_key: &[u8]) -> bool {
        crypto::verify(ca_public_key, &self.body().canonical_bytes(), &self.ca_signature)
    }

    /// Content digest used as the audit lookup key:
    /// `hash(subject fields ∥ public key ∥ serial)`.
    pub fn audit_digest(&self) -> crypto::Digest {
        hash_parts(&[
            self.subject_name.as_bytes(),
            self.subject_email.as_bytes(),
            &self.subject_public_key,
            self.cert_serial.as_bytes(),
        ])
    }

    pub fn subject_matches(&self, csr: &CsrRecord) -> bool {
        self.csr_id == csr.csr_id
            && self.subject_name == csr.subject_name
            && self.subject_email == csr.subject_email
            && self.subject_public_key == csr.subject_public_key
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaMemberRecord {
    pub ra_member_id: String,
    pub display_name: String,
    #[serde(with = "hexbytes")]
    pub public_key: Vec<u8>,
    pub permitted_domains: BTreeSet<String>,
}

/// Two endorsements (or an endorsement and the CSR) disagree on a field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlausibilityConflict {
    pub field: String,
    pub first_member: String,
    /// Empty when the conflict is against the CSR itself.
    pub second_member: String,
    pub first_value: String,
    pub second_value: String,
}

/// The part after `'@'`, if the address has exactly one `'@'`.
pub fn domain_of(email: &str) -> Option<&str> {
    let mut parts = email.split('@');
    let (_local, domain) = (parts.next()?, parts.next()?);
    if parts.next().is_some() || domain.is_empty() {
        return None;
    }
    Some(domain)
}

fn valid_email(email: &str) -> bool {
    email.matches('@').count() == 1 && domain_of(email).is_some() && !email.starts_with('@')
}

fn printable_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_graphic() && c != '/')
}

/// Any record that can be checked against its type invariants.
#[derive(Debug, Clone, Copy)]
pub enum RecordRef<'a> {
    User(&'a UserRecord),
    Csr(&'a CsrRecord),
    /// An endorsement together with the CSR id it claims and the endorser's
    /// registered public key.
    Endorsement { record: &'a RaEndorsementRecord, csr_id: &'a str, ra_public_key: &'a [u8] },
    Certificate(&'a CertificateRecord),
    RaMember(&'a RaMemberRecord),
}

/// Returns every violated type invariant; empty means valid.
pub fn validate_record(record: RecordRef<'_>) -> Vec<String> {
    let mut v = Vec::new();
    match record {
        RecordRef::User(u) => {
            if !printable_id(&u.user_id) {
                v.push(format!("user_id {:?} is not a printable id", u.user_id));
            }
            if !valid_email(&u.email) {
                v.push(format!("email {:?} must contain exactly one '@'", u.email));
            }
            for csr in &u.csrs {
                if csr.subject_email != u.email {
                    v.push(format!("csr {} subject email differs from user email", csr.csr_id));
                }
                v.extend(validate_record(RecordRef::Csr(csr)));
            }
            for cert in &u.certificates {
                match u.csr(&cert.csr_id) {
                    None => v.push(format!("certificate {} references unknown csr {}", cert.cert_serial, cert.csr_id)),
                    Some(csr) if !csr.authorized => {
                        v.push(format!("certificate {} references unauthorized csr", cert.cert_serial))
                    }
                    Some(csr) if !cert.subject_matches(csr) => {
                        v.push(format!("certificate {} subject differs from csr", cert.cert_serial))
                    }
                    Some(_) => {}
                }
            }
        }
        RecordRef::Csr(c) => {
            if !printable_id(&c.csr_id) {
                v.push(format!("csr_id {:?} is not a printable id", c.csr_id));
            }
            if domain_of(&c.subject_email) != Some(c.domain.as_str()) {
                v.push(format!("domain {:?} does not match subject email {:?}", c.domain, c.subject_email));
            }
            if c.csr_id != c.subject().csr_id() {
                v.push("csr_id does not match subject fields".into());
            }
            if c.authorized && c.endorsements.is_empty() {
                v.push("authorized without any endorsement".into());
            }
            let distinct: BTreeSet<&str> = c.endorsements.iter().map(|e| e.ra_member_id.as_str()).collect();
            if distinct.len() != c.endorsements.len() {
                v.push("more than one endorsement from the same RA member".into());
            }
            for e in &c.endorsements {
                if e.id_document_serial_suffix.is_empty() {
                    v.push(format!("endorsement by {} has empty serial suffix", e.ra_member_id));
                }
            }
        }
        RecordRef::Endorsement { record, csr_id, ra_public_key } => {
            if record.id_document_serial_suffix.is_empty() {
                v.push("id_document_serial_suffix is empty".into());
            } else if record.id_document_serial_suffix.chars().count() > SERIAL_SUFFIX_MAX {
                v.push(format!("id_document_serial_suffix longer than {SERIAL_SUFFIX_MAX} characters"));
            }
            if !record.signature_valid(csr_id, ra_public_key) {
                v.push(format!("signature by {} does not verify", record.ra_member_id));
            }
        }
        RecordRef::Certificate(c) => {
            if c.cert_serial.is_empty() {
                v.push("cert_serial is empty".into());
            }
            if !valid_email(&c.subject_email) {
                v.push(format!("subject email {:?} must contain exactly one '@'", c.subject_email));
            }
        }
        RecordRef::RaMember(r) => {
            if !printable_id(&r.ra_member_id) {
                v.push(format!("ra_member_id {:?} is not a printable id", r.ra_member_id));
            }
            if r.permitted_domains.is_empty() {
                v.push("permitted_domains is empty".into());
            }
            if r.public_key.len() != 32 {
                v.push("public_key is not a 32-byte key".into());
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::CanonicalError;
    use proptest::prelude::*;

    fn t0() -> Timestamp {
        Timestamp::from_unix(1_767_225_600)
    }

    fn sample_csr() -> CsrRecord {
        CsrRecord::create(&KeyPair::from_byte(1), "Alice", "alice@x.example.org", t0())
    }

    fn endorsement(ra: &KeyPair, id: &str, csr: &CsrRecord) -> RaEndorsementRecord {
        RaEndorsementRecord::create(
            ra,
            EndorsementBody {
                csr_id: csr.csr_id.clone(),
                ra_member_id: id.into(),
                verified_name: "Alice".into(),
                verified_email: "alice@x.example.org".into(),
                id_document_serial_suffix: "4711".into(),
                timestamp: t0().plus_secs(60),
            },
        )
    }

    #[test]
    fn domain_extraction() {
        assert_eq!(domain_of("a@x.example.org"), Some("x.example.org"));
        assert_eq!(domain_of("a@b@c"), None);
        assert_eq!(domain_of("nobody"), None);
        assert_eq!(domain_of("a@"), None);
    }

    #[test]
    fn fresh_csr_is_valid_and_unauthorized() {
        let csr = sample_csr();
        assert!(!csr.authorized);
        assert!(csr.endorsements.is_empty());
        assert_eq!(csr.domain, "x.example.org");
        assert_eq!(csr.csr_id.len(), 32);
        assert!(csr.proof_of_possession_valid());
        assert_eq!(validate_record(RecordRef::Csr(&csr)), Vec::<String>::new());
    }

    #[test]
    fn authorized_without_endorsements_is_one_violation() {
        let mut csr = sample_csr();
        csr.authorized = true;
        assert_eq!(validate_record(RecordRef::Csr(&csr)).len(), 1);
    }

    #[test]
    fn bad_endorsement_signature_is_one_violation() {
        let csr = sample_csr();
        let ra = KeyPair::from_byte(2);
        let e = endorsement(&ra, "ra1", &csr);
        let good = RecordRef::Endorsement { record: &e, csr_id: &csr.csr_id, ra_public_key: &ra.public_key };
        assert!(validate_record(good).is_empty());
        let wrong_key = KeyPair::from_byte(3).public_key;
        let bad = RecordRef::Endorsement { record: &e, csr_id: &csr.csr_id, ra_public_key: &wrong_key };
        assert_eq!(validate_record(bad).len(), 1);
        // signature also binds the csr id
        let other = RecordRef::Endorsement { record: &e, csr_id: "other", ra_public_key: &ra.public_key };
        assert_eq!(validate_record(other).len(), 1);
    }

    #[test]
    fn user_with_foreign_csr_violates() {
        let mut user = UserRecord::new("bob", "Bob", "bob@y.example.org");
        user.csrs.push(sample_csr());
        assert_eq!(validate_record(RecordRef::User(&user)).len(), 1);
    }

    #[test]
    fn serialization_round_trip_and_sensitivity() {
        let csr = sample_csr();
        let bytes = csr.canonical_bytes();
        assert_eq!(bytes, csr.canonical_bytes());
        assert_eq!(CsrRecord::from_canonical_bytes(&bytes).unwrap(), csr);
        let mut flipped = csr.clone();
        flipped.authorized = true;
        assert_ne!(flipped.canonical_bytes(), bytes);
    }

    #[test]
    fn truncated_or_unknown_field_is_malformed() {
        let bytes = sample_csr().canonical_bytes();
        assert!(matches!(
            CsrRecord::from_canonical_bytes(&bytes[..bytes.len() - 3]),
            Err(CanonicalError::Malformed { .. })
        ));
        let mut value: serde_json::Value = serde_json::to_value(sample_csr()).unwrap();
        value["extra"] = serde_json::json!("x");
        let extra = crate::canonical::to_canonical(&value).unwrap();
        match CsrRecord::from_canonical_bytes(&extra) {
            Err(CanonicalError::Schema(msg)) => assert!(msg.contains("unknown field"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn certificate_fields_copied_from_csr() {
        let csr = sample_csr();
        let ca = KeyPair::from_byte(50);
        let cert = CertificateRecord::issue_for(&ca, &csr, "0001", t0().plus_secs(3600));
        assert!(cert.subject_matches(&csr));
        assert!(cert.signature_valid(&ca.public_key));
        let mut tampered = cert.clone();
        tampered.subject_name.push('!');
        assert!(!tampered.signature_valid(&ca.public_key));
        assert_ne!(tampered.audit_digest(), cert.audit_digest());
    }

    proptest! {
        #[test]
        fn equal_records_serialize_identically(name in "[A-Za-z ]{1,12}", local in "[a-z]{1,8}", secs in 0i64..4_000_000_000, seed in any::<u8>()) {
            let email = format!("{local}@d.example");
            let a = CsrRecord::create(&KeyPair::from_byte(seed), &name, &email, Timestamp::from_unix(secs));
            let b = a.clone();
            prop_assert_eq!(a.canonical_bytes(), b.canonical_bytes());
            prop_assert_eq!(CsrRecord::from_canonical_bytes(&a.canonical_bytes()).unwrap(), a);
        }
    }
}
