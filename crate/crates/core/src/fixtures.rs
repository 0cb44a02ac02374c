//! Deterministic scenario driver used by tests, the acceptance suite and
//! demos. All keys derive from labels and timestamps from a fixed clock, so
//! two runs of the same script produce byte-identical chains.

use std::sync::atomic::{AtomicI64, Ordering};

use crate::crypto::KeyPair;
use crate::datamodel::{CertificateRecord, CsrRecord, EndorsementBody, RaEndorsementRecord, RaMemberRecord, UserRecord};
use crate::ledger::{
    csr_key, user_key, EndorsementQuorumPolicy, LedgerBlock, LedgerError, Network, NetworkConfig,
};
use crate::policy::CertificationPolicy;
use crate::time::Timestamp;
use crate::workflow::{txs, RecordIndex, TrustAnchors};

/// 2026-01-01T00:00:00Z
pub const EPOCH: i64 = 1_767_225_600;

pub fn admin_key() -> KeyPair {
    KeyPair::from_label("admin")
}

pub fn ca_key() -> KeyPair {
    KeyPair::from_label("ca")
}

pub fn requester_key(user_id: &str) -> KeyPair {
    KeyPair::from_label(&format!("user/{user_id}"))
}

pub fn ra_member_key(ra_member_id: &str) -> KeyPair {
    KeyPair::from_label(&format!("ra/{ra_member_id}"))
}

/// Monotone clock advancing one minute per tick.
#[derive(Debug)]
pub struct Clock(AtomicI64);

impl Clock {
    pub fn starting_at(unix: i64) -> Self {
        Clock(AtomicI64::new(unix))
    }

    pub fn tick(&self) -> Timestamp {
        Timestamp::from_unix(self.0.fetch_add(60, Ordering::SeqCst))
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::starting_at(EPOCH)
    }
}

pub struct Fixture {
    pub admin: KeyPair,
    pub ca: KeyPair,
    pub network: Network,
    pub clock: Clock,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_quorum(EndorsementQuorumPolicy::default())
    }

    pub fn with_quorum(quorum: EndorsementQuorumPolicy) -> Self {
        let (admin, ca) = (admin_key(), ca_key());
        let config = NetworkConfig::new(TrustAnchors::new(&admin, &ca)).with_quorum(quorum);
        let network = Network::new(config).expect("valid fixture quorum");
        Fixture { admin, ca, network, clock: Clock::default() }
    }

    pub fn install_policy(&self, policy: &CertificationPolicy) -> Result<LedgerBlock, LedgerError> {
        self.network.submit(&txs::policy_update(&self.admin, policy, self.clock.tick()))
    }

    pub fn register_user(&self, user_id: &str, name: &str, email: &str) -> Result<LedgerBlock, LedgerError> {
        self.network.submit(&txs::register_user(&self.admin, user_id, name, email, self.clock.tick()))
    }

    pub fn register_ra<I, S>(&self, ra_member_id: &str, domains: I) -> Result<LedgerBlock, LedgerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let member = RaMemberRecord {
            ra_member_id: ra_member_id.to_owned(),
            display_name: format!("RA member {ra_member_id}"),
            public_key: ra_member_key(ra_member_id).public_key,
            permitted_domains: domains.into_iter().map(Into::into).collect(),
        };
        self.network.submit(&txs::register_ra_member(&self.admin, &member, self.clock.tick()))
    }

    /// Builds and submits a CSR for a registered user, signed with the
    /// user's derived key.
    pub fn submit_csr(&self, user_id: &str, name: &str, email: &str) -> Result<CsrRecord, LedgerError> {
        let key = requester_key(user_id);
        let csr = CsrRecord::create(&key, name, email, self.clock.tick());
        self.network.submit(&txs::create_csr(&key, user_id, &csr, self.clock.tick()))?;
        Ok(csr)
    }

    pub fn endorsement(
        &self,
        ra_member_id: &str,
        csr_id: &str,
        verified_name: &str,
        verified_email: &str,
        serial_suffix: &str,
    ) -> RaEndorsementRecord {
        RaEndorsementRecord::create(
            &ra_member_key(ra_member_id),
            EndorsementBody {
                csr_id: csr_id.to_owned(),
                ra_member_id: ra_member_id.to_owned(),
                verified_name: verified_name.to_owned(),
                verified_email: verified_email.to_owned(),
                id_document_serial_suffix: serial_suffix.to_owned(),
                timestamp: self.clock.tick(),
            },
        )
    }

    pub fn endorse(
        &self,
        ra_member_id: &str,
        csr_id: &str,
        verified_name: &str,
        verified_email: &str,
        serial_suffix: &str,
    ) -> Result<LedgerBlock, LedgerError> {
        let record = self.endorsement(ra_member_id, csr_id, verified_name, verified_email, serial_suffix);
        let tx = txs::endorse_csr(&ra_member_key(ra_member_id), csr_id, &record, self.clock.tick());
        self.network.submit(&tx)
    }

    /// Endorses with data copied from the CSR itself.
    pub fn endorse_consistently(&self, ra_member_id: &str, csr: &CsrRecord) -> Result<LedgerBlock, LedgerError> {
        self.endorse(ra_member_id, &csr.csr_id, &csr.subject_name, &csr.subject_email, "4711")
    }

    /// Current committed copy of a CSR.
    pub fn csr(&self, csr_id: &str) -> Option<CsrRecord> {
        let index: RecordIndex = self.network.query_state(&csr_key(csr_id)).ok()?;
        self.user(&index.user_id)?.csr(csr_id).cloned()
    }

    pub fn user(&self, user_id: &str) -> Option<UserRecord> {
        self.network.query_state(&user_key(user_id)).ok()
    }

    /// The CA signs a certificate for the committed CSR and submits it.
    pub fn issue(&self, csr_id: &str, serial: &str) -> Result<CertificateRecord, LedgerError> {
        let csr = self.csr(csr_id).ok_or_else(|| LedgerError::NotFound(csr_key(csr_id)))?;
        let cert = CertificateRecord::issue_for(&self.ca, &csr, serial, self.clock.tick());
        self.network.submit(&txs::issue_certificate(&self.ca, &cert, self.clock.tick()))?;
        Ok(cert)
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
