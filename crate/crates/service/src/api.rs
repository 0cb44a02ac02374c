//! HTTP/JSON endpoints. Every state-changing request carries a client
//! signature in headers and is turned into a ledger transaction; reads serve
//! committed state only.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ccs_core::crypto::{fingerprint, Signature};
use ccs_core::datamodel::{CertificateRecord, CsrRecord, RaEndorsementRecord, RaMemberRecord, UserRecord};
use ccs_core::ledger::{
    cert_key, csr_key, ra_key, user_key, verify_chain, verify_chain_bytes, verify_endorsements, ChainVerdict,
    LedgerBlock, LedgerError, Network, Transaction, TxType, WorldState, POLICY_KEY,
};
use ccs_core::policy::{self, CertificationPolicy};
use ccs_core::workflow::{audit_certificate, AuditOutcome, CreateCsr, EndorseCsr, IssueCertificate, RecordIndex, RegisterUser};
use ccs_core::{Canonical, Timestamp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PUBLIC_KEY_HEADER: &str = "x-ccs-public-key";
pub const SUBMITTED_AT_HEADER: &str = "x-ccs-submitted-at";
pub const SIGNATURE_HEADER: &str = "x-ccs-signature";

/// How often a write is re-proposed after losing a race with another commit.
const STALE_READ_RETRIES: usize = 3;

#[derive(Clone)]
pub struct AppState {
    pub network: Arc<Network>,
    pub chain_file: Option<PathBuf>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState")
            .field("height", &self.network.height())
            .field("chain_file", &self.chain_file)
            .finish_non_exhaustive()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/users", post(register_user))
        .route("/users/{id}", get(get_user))
        .route("/ra-members", post(register_ra_member))
        .route("/policy", get(get_policy).put(put_policy))
        .route("/csrs", get(list_csrs).post(create_csr))
        .route("/csrs/{id}", get(get_csr))
        .route("/csrs/{id}/endorsements", post(endorse_csr))
        .route("/certificates", post(issue_certificate))
        .route("/certificates/{serial}", get(get_certificate))
        .route("/audit", post(audit))
        .route("/chain", get(get_chain))
        .route("/chain/verify", get(verify))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        ApiError { status, code: code.to_owned(), detail: detail.into() }
    }

    fn unauthenticated(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", detail)
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", what)
    }
}

/// HTTP status for a ledger or chaincode error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "not-permitted" | "not-admin" | "not-ca" | "submitter-mismatch" => StatusCode::FORBIDDEN,
        "csr-not-authorized" | "already-authorized" | "duplicate-id" | "duplicate-csr" | "duplicate-endorser"
        | "duplicate-certificate" | "duplicate-transaction" | "stale-read" => StatusCode::CONFLICT,
        "unknown-user" | "unknown-csr" | "not-found" => StatusCode::NOT_FOUND,
        "malformed-payload" | "invalid-record" | "invalid-policy" => StatusCode::BAD_REQUEST,
        "malformed-transaction" => StatusCode::UNAUTHORIZED,
        "quorum-not-reached" => StatusCode::SERVICE_UNAVAILABLE,
        "email-mismatch" | "proof-of-possession-failed" | "invalid-endorsement-signature" | "invalid-ca-signature"
        | "subject-mismatch" | "no-rule-for-domain" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        let (code, detail) = match &e {
            LedgerError::ChaincodeRejection(r) => (r.code(), r.to_string()),
            other => (other.code(), other.to_string()),
        };
        ApiError::new(status_for(code), code, detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.code, detail: self.detail })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Returned by every write endpoint once its transaction is committed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: String,
    pub block_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsrEntry {
    pub user_id: String,
    pub csr: CsrRecord,
    /// Endorsements the domain rule asks for, if a rule applies.
    pub required_endorsements: Option<u32>,
    pub cert_serial: Option<String>,
    /// Present for RA queries: whether that member may endorse this CSR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permitted: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    /// `ok` or `invalid`.
    pub status: String,
    pub blocks: u64,
    pub first_bad_height: Option<u64>,
    /// `file` when the persisted chain was checked, otherwise `memory`.
    pub source: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CsrQuery {
    pending_for: Option<String>,
    status: Option<String>,
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "height": state.network.height() }))
}

fn header<'h>(headers: &'h HeaderMap, name: &str) -> Result<&'h str, ApiError> {
    headers
        .get(name)
        .ok_or_else(|| ApiError::unauthenticated(format!("missing {name} header")))?
        .to_str()
        .map_err(|_| ApiError::unauthenticated(format!("{name} is not ASCII")))
}

/// Rebuilds the client's transaction from the request. The signature must
/// cover the transaction signing bytes for the canonical payload.
fn signed_transaction<P: Canonical>(headers: &HeaderMap, tx_type: TxType, payload: &P) -> Result<Transaction, ApiError> {
    let public_key = hex::decode(header(headers, PUBLIC_KEY_HEADER)?)
        .map_err(|_| ApiError::unauthenticated("public key is not hex"))?;
    let at = header(headers, SUBMITTED_AT_HEADER)?;
    let submitted_at =
        Timestamp::parse(at).ok_or_else(|| ApiError::unauthenticated(format!("bad submission time {at:?}")))?;
    let signature = Signature {
        bytes: hex::decode(header(headers, SIGNATURE_HEADER)?).map_err(|_| ApiError::unauthenticated("signature is not hex"))?,
        signer_key_id: fingerprint(&public_key),
    };
    let tx = Transaction::from_signed_parts(tx_type, payload.canonical_bytes(), public_key, submitted_at, signature);
    tx.check_well_formed()?;
    Ok(tx)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed-payload", e.to_string()))
}

async fn submit(state: &AppState, tx: Transaction) -> Result<LedgerBlock, ApiError> {
    let network = Arc::clone(&state.network);
    tokio::task::spawn_blocking(move || {
        let mut attempt = 0;
        loop {
            match network.submit(&tx) {
                Err(LedgerError::StaleRead { .. }) if attempt < STALE_READ_RETRIES => attempt += 1,
                other => return other,
            }
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(ApiError::from)
}

async fn write<P: Canonical>(state: &AppState, headers: &HeaderMap, tx_type: TxType, payload: &P) -> ApiResult<Receipt> {
    let tx = signed_transaction(headers, tx_type, payload)?;
    let block = submit(state, tx.clone()).await?;
    Ok(Json(Receipt { tx_id: tx.tx_id, block_height: block.height }))
}

async fn register_user(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Receipt> {
    let payload: RegisterUser = parse_body(&body)?;
    write(&state, &headers, TxType::RegisterUser, &payload).await
}

async fn register_ra_member(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Receipt> {
    let payload: RaMemberRecord = parse_body(&body)?;
    write(&state, &headers, TxType::RegisterRaMember, &payload).await
}

async fn put_policy(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Receipt> {
    let payload: CertificationPolicy = parse_body(&body)?;
    write(&state, &headers, TxType::PolicyUpdate, &payload).await
}

async fn create_csr(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Receipt> {
    let payload: CreateCsr = parse_body(&body)?;
    write(&state, &headers, TxType::CreateCsr, &payload).await
}

async fn endorse_csr(
    State(state): State<AppState>,
    Path(csr_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Receipt> {
    let endorsement: RaEndorsementRecord = parse_body(&body)?;
    write(&state, &headers, TxType::EndorseCsr, &EndorseCsr { csr_id, endorsement }).await
}

async fn issue_certificate(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Receipt> {
    let certificate: CertificateRecord = parse_body(&body)?;
    write(&state, &headers, TxType::IssueCertificate, &IssueCertificate { certificate }).await
}

fn lookup<T: Canonical>(state: &WorldState, key: &str) -> Result<Option<T>, ApiError> {
    state
        .get(key)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt-state", format!("{key}: {e}")))
}

async fn get_user(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<UserRecord> {
    let user = state.network.with_state(|s| lookup::<UserRecord>(s, &user_key(&id)))?;
    user.map(Json).ok_or_else(|| ApiError::not_found(format!("user {id}")))
}

async fn get_policy(State(state): State<AppState>) -> ApiResult<CertificationPolicy> {
    let policy = state.network.with_state(|s| lookup::<CertificationPolicy>(s, POLICY_KEY))?;
    policy.map(Json).ok_or_else(|| ApiError::not_found("no policy installed"))
}

fn csr_entry(user: &UserRecord, csr: &CsrRecord, policy: Option<&CertificationPolicy>) -> CsrEntry {
    CsrEntry {
        user_id: user.user_id.clone(),
        csr: csr.clone(),
        required_endorsements: policy
            .and_then(|p| policy::resolve_rule(p, &csr.domain).ok())
            .map(|r| r.required_endorsements),
        cert_serial: user.certificates.iter().find(|c| c.csr_id == csr.csr_id).map(|c| c.cert_serial.clone()),
        permitted: None,
    }
}

fn all_csrs(state: &WorldState) -> Result<Vec<CsrEntry>, ApiError> {
    let policy: Option<CertificationPolicy> = lookup(state, POLICY_KEY)?;
    let mut entries = Vec::new();
    for key in state.keys_with_prefix("user/") {
        let Some(user) = lookup::<UserRecord>(state, key)? else { continue };
        entries.extend(user.csrs.iter().map(|csr| csr_entry(&user, csr, policy.as_ref())));
    }
    Ok(entries)
}

/// Lists CSRs. `pending-for=<ra>` gives the unauthorized CSRs that member has
/// not endorsed yet, each flagged with whether the member may endorse it;
/// `status` filters by `pending`, `authorized` or `issued`.
async fn list_csrs(State(state): State<AppState>, Query(query): Query<CsrQuery>) -> ApiResult<Vec<CsrEntry>> {
    state.network.with_state(|s| {
        let mut entries = all_csrs(s)?;
        if let Some(status) = &query.status {
            let keep: fn(&CsrEntry) -> bool = match status.as_str() {
                "pending" => |e| !e.csr.authorized,
                "authorized" => |e| e.csr.authorized && e.cert_serial.is_none(),
                "issued" => |e| e.cert_serial.is_some(),
                _ => {
                    return Err(ApiError::new(StatusCode::BAD_REQUEST, "malformed-payload", format!("unknown status {status:?}")))
                }
            };
            entries.retain(keep);
        }
        if let Some(ra) = &query.pending_for {
            let policy: Option<CertificationPolicy> = lookup(s, POLICY_KEY)?;
            let member: Option<RaMemberRecord> = lookup(s, &ra_key(ra))?;
            entries.retain(|e| !e.csr.authorized && !e.csr.endorsed_by(ra));
            for e in &mut entries {
                let by_policy = policy.as_ref().is_some_and(|p| policy::is_permitted(p, ra, &e.csr).unwrap_or(false));
                let by_registry = member.as_ref().is_some_and(|m| m.permitted_domains.contains(&e.csr.domain));
                e.permitted = Some(by_policy && by_registry);
            }
        }
        Ok(Json(entries))
    })
}

async fn get_csr(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<CsrEntry> {
    state.network.with_state(|s| {
        let index: RecordIndex = lookup(s, &csr_key(&id))?.ok_or_else(|| ApiError::not_found(format!("csr {id}")))?;
        let user: UserRecord =
            lookup(s, &user_key(&index.user_id))?.ok_or_else(|| ApiError::not_found(format!("csr {id}")))?;
        let policy: Option<CertificationPolicy> = lookup(s, POLICY_KEY)?;
        let csr = user.csr(&id).ok_or_else(|| ApiError::not_found(format!("csr {id}")))?;
        Ok(Json(csr_entry(&user, csr, policy.as_ref())))
    })
}

async fn get_certificate(State(state): State<AppState>, Path(serial): Path<String>) -> ApiResult<CertificateRecord> {
    state.network.with_state(|s| {
        let missing = || ApiError::not_found(format!("certificate {serial}"));
        let index: RecordIndex = lookup(s, &cert_key(&serial))?.ok_or_else(missing)?;
        let user: UserRecord = lookup(s, &user_key(&index.user_id))?.ok_or_else(missing)?;
        user.certificate(&serial).cloned().map(Json).ok_or_else(missing)
    })
}

async fn audit(State(state): State<AppState>, body: Bytes) -> ApiResult<AuditOutcome> {
    let cert: CertificateRecord = parse_body(&body)?;
    Ok(Json(state.network.with_state(|s| audit_certificate(&cert, s))))
}

async fn get_chain(State(state): State<AppState>) -> Json<Vec<LedgerBlock>> {
    Json(state.network.chain())
}

/// Checks hash links and, for the in-memory chain, that each entry carries
/// a quorum of valid node endorsements.
async fn verify(State(state): State<AppState>) -> ApiResult<ChainReport> {
    let network = &state.network;
    let (verdict, source) = match &state.chain_file {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", format!("{}: {e}", path.display())))?;
            (verify_chain_bytes(&bytes), "file")
        }
        None => (verify_chain(&network.chain()), "memory"),
    };
    let verdict = match verdict {
        ChainVerdict::Ok => verify_endorsements(&network.chain(), &network.config().quorum, |id| network.node_public_key(id)),
        bad => bad,
    };
    let first_bad_height = match verdict {
        ChainVerdict::Ok => None,
        ChainVerdict::FirstBadHeight(h) => Some(h),
    };
    Ok(Json(ChainReport {
        status: if first_bad_height.is_none() { "ok" } else { "invalid" }.into(),
        blocks: network.height() as u64,
        first_bad_height,
        source: source.into(),
    }))
}
