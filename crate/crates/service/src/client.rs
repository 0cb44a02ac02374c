//! Blocking client for the HTTP API. Transactions are signed here, with the
//! caller's key, so the service never sees private keys.

use ccs_core::crypto::KeyPair;
use ccs_core::datamodel::{CertificateRecord, CsrRecord, RaEndorsementRecord, RaMemberRecord, UserRecord};
use ccs_core::ledger::{LedgerBlock, Transaction, TxType};
use ccs_core::policy::CertificationPolicy;
use ccs_core::workflow::{AuditOutcome, CreateCsr, EndorseCsr, IssueCertificate, RegisterUser};
use ccs_core::{Canonical, Timestamp};
use reqwest::blocking::{Client as Http, RequestBuilder};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{ChainReport, CsrEntry, ErrorBody, Receipt, PUBLIC_KEY_HEADER, SIGNATURE_HEADER, SUBMITTED_AT_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{code} ({status}): {detail}")]
    Api { status: u16, code: String, detail: String },
}

impl ClientError {
    /// The service's error code, if the request reached the service.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            ClientError::Http(_) => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Http(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        Client { base: base_url.trim_end_matches('/').to_owned(), http: Http::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send<T: DeserializeOwned>(&self, request: RequestBuilder) -> Result<T, ClientError> {
        let response = request.send()?;
        let status = response.status();
        if status.is_success() {
            return Ok(response.json()?);
        }
        let text = response.text()?;
        let (code, detail) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.error, body.detail),
            Err(_) => ("http-error".to_owned(), text),
        };
        Err(ClientError::Api { status: status.as_u16(), code, detail })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.send(self.http.get(self.url(path)))
    }

    /// Sends `body` as JSON, signed as a `tx_type` transaction over
    /// `payload`.
    #[allow(clippy::too_many_arguments)]
    fn signed<B: Serialize, P: Canonical>(
        &self,
        method: Method,
        path: &str,
        body: &B,
        tx_type: TxType,
        payload: &P,
        key: &KeyPair,
        at: Timestamp,
    ) -> Result<Receipt, ClientError> {
        let message = Transaction::signing_bytes(tx_type, &payload.canonical_bytes(), &key.public_key, at);
        let signature = key.sign(&message);
        let request = self
            .http
            .request(method, self.url(path))
            .header(PUBLIC_KEY_HEADER, hex::encode(&key.public_key))
            .header(SUBMITTED_AT_HEADER, at.to_rfc3339())
            .header(SIGNATURE_HEADER, hex::encode(&signature.bytes))
            .json(body);
        self.send(request)
    }

    pub fn health(&self) -> Result<serde_json::Value, ClientError> {
        self.get("/health")
    }

    pub fn register_user(&self, admin: &KeyPair, user: &RegisterUser, at: Timestamp) -> Result<Receipt, ClientError> {
        self.signed(Method::POST, "/users", user, TxType::RegisterUser, user, admin, at)
    }

    pub fn register_ra_member(&self, admin: &KeyPair, member: &RaMemberRecord, at: Timestamp) -> Result<Receipt, ClientError> {
        self.signed(Method::POST, "/ra-members", member, TxType::RegisterRaMember, member, admin, at)
    }

    pub fn put_policy(&self, admin: &KeyPair, policy: &CertificationPolicy, at: Timestamp) -> Result<Receipt, ClientError> {
        self.signed(Method::PUT, "/policy", policy, TxType::PolicyUpdate, policy, admin, at)
    }

    pub fn policy(&self) -> Result<CertificationPolicy, ClientError> {
        self.get("/policy")
    }

    pub fn submit_csr(&self, requester: &KeyPair, user_id: &str, csr: &CsrRecord, at: Timestamp) -> Result<Receipt, ClientError> {
        let payload = CreateCsr { user_id: user_id.to_owned(), csr: csr.clone() };
        self.signed(Method::POST, "/csrs", &payload, TxType::CreateCsr, &payload, requester, at)
    }

    pub fn user(&self, user_id: &str) -> Result<UserRecord, ClientError> {
        self.get(&format!("/users/{user_id}"))
    }

    pub fn csr(&self, csr_id: &str) -> Result<CsrEntry, ClientError> {
        self.get(&format!("/csrs/{csr_id}"))
    }

    pub fn pending_for(&self, ra_member_id: &str) -> Result<Vec<CsrEntry>, ClientError> {
        self.send(self.http.get(self.url("/csrs")).query(&[("pending-for", ra_member_id)]))
    }

    pub fn csrs_with_status(&self, status: &str) -> Result<Vec<CsrEntry>, ClientError> {
        self.send(self.http.get(self.url("/csrs")).query(&[("status", status)]))
    }

    pub fn endorse(
        &self,
        ra: &KeyPair,
        csr_id: &str,
        endorsement: &RaEndorsementRecord,
        at: Timestamp,
    ) -> Result<Receipt, ClientError> {
        let payload = EndorseCsr { csr_id: csr_id.to_owned(), endorsement: endorsement.clone() };
        let path = format!("/csrs/{csr_id}/endorsements");
        self.signed(Method::POST, &path, endorsement, TxType::EndorseCsr, &payload, ra, at)
    }

    pub fn issue(&self, ca: &KeyPair, certificate: &CertificateRecord, at: Timestamp) -> Result<Receipt, ClientError> {
        let payload = IssueCertificate { certificate: certificate.clone() };
        self.signed(Method::POST, "/certificates", certificate, TxType::IssueCertificate, &payload, ca, at)
    }

    pub fn certificate(&self, serial: &str) -> Result<CertificateRecord, ClientError> {
        self.get(&format!("/certificates/{serial}"))
    }

    pub fn audit(&self, certificate: &CertificateRecord) -> Result<AuditOutcome, ClientError> {
        self.send(self.http.post(self.url("/audit")).json(certificate))
    }

    pub fn chain(&self) -> Result<Vec<LedgerBlock>, ClientError> {
        self.get("/chain")
    }

    pub fn verify_chain(&self) -> Result<ChainReport, ClientError> {
        self.get("/chain/verify")
    }
}
