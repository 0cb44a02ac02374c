//! Transparency-log style lookup of a certificate's validation history.
//!
//! Certificates are found by content digest, so a certificate the CA signed
//! outside the workflow, or one altered after issuance, has no history.

use serde::{Deserialize, Serialize};

use crate::datamodel::{CertificateRecord, UserRecord};
use crate::ledger::{audit_key, user_key, WorldState};
use crate::time::Timestamp;

use super::RecordIndex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailEntry {
    pub ra_member_id: String,
    pub timestamp: Timestamp,
    pub verified_name: String,
    pub verified_email: String,
    pub id_document_serial_suffix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationHistory {
    pub cert_serial: String,
    pub csr_id: String,
    pub user_id: String,
    pub domain: String,
    pub csr_created_at: Timestamp,
    pub issued_at: Timestamp,
    pub endorsements: Vec<TrailEntry>,
}

impl ValidationHistory {
    pub fn endorsers(&self) -> Vec<&str> {
        self.endorsements.iter().map(|e| e.ra_member_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum AuditOutcome {
    History(ValidationHistory),
    NoHistory,
}

impl AuditOutcome {
    pub fn history(&self) -> Option<&ValidationHistory> {
        match self {
            AuditOutcome::History(h) => Some(h),
            AuditOutcome::NoHistory => None,
        }
    }
}

pub fn audit_certificate(cert: &CertificateRecord, state: &WorldState) -> AuditOutcome {
    lookup(cert, state).map_or(AuditOutcome::NoHistory, AuditOutcome::History)
}

fn lookup(cert: &CertificateRecord, state: &WorldState) -> Option<ValidationHistory> {
    let index: RecordIndex = state.get(&audit_key(&cert.audit_digest().to_hex())).ok()??;
    let user: UserRecord = state.get(&user_key(&index.user_id)).ok()??;
    let stored = user.certificate(&cert.cert_serial)?;
    if stored != cert {
        return None;
    }
    let csr = user.csr(&stored.csr_id)?;
    if !csr.authorized || csr.endorsements.is_empty() {
        return None;
    }
    Some(ValidationHistory {
        cert_serial: stored.cert_serial.clone(),
        csr_id: csr.csr_id.clone(),
        user_id: user.user_id.clone(),
        domain: csr.domain.clone(),
        csr_created_at: csr.created_at,
        issued_at: stored.issued_at,
        endorsements: csr
            .endorsements
            .iter()
            .map(|e| TrailEntry {
                ra_member_id: e.ra_member_id.clone(),
                timestamp: e.timestamp,
                verified_name: e.verified_name.clone(),
                verified_email: e.verified_email.clone(),
                id_document_serial_suffix: e.id_document_serial_suffix.clone(),
            })
            .collect(),
    })
}
