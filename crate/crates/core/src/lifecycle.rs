//! The write path: issuance, chain extension, re-authorization and
//! principal stripping.
//!
//! Signing payloads are rebuilt the same way by the verifier, so the two
//! payload functions here are the single definition of what gets signed.

use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;
use uuid::Uuid;

use crate::crypto::{KeyPair, ALG_ED25519};
use crate::json::{canonicalize, JsonValue, MAX_SAFE_INTEGER};
use crate::token::{
    validate_structure, AuditRecord, Header, Hop, Principal, Scope, SignatureBlock,
    StructuralViolation, Token, HDP_VERSION,
};

/// Default token lifetime: 24 hours in milliseconds.
pub const DEFAULT_TTL_MS: u64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("invalid request: {}", join(.0))]
    InvalidRequest(Vec<StructuralViolation>),
    #[error("token is not structurally valid: {}", join(.0))]
    StructurallyInvalid(Vec<StructuralViolation>),
    #[error("root signing payload requires an empty chain")]
    ChainNotEmpty,
    #[error("prior hop {0} carries no hop_signature")]
    PriorHopUnsigned(u64),
    #[error("new hop already carries a hop_signature")]
    NewHopAlreadySigned,
    #[error("token expired at {expires_at} (now {now})")]
    TokenExpired { expires_at: u64, now: u64 },
    #[error("chain already holds max_hops = {0} hops")]
    MaxHopsReached(u64),
    #[error("signing key {key_kid:?} does not match token kid {token_kid:?}")]
    KeyMismatch { key_kid: String, token_kid: String },
    #[error("hop request: {0}")]
    InvalidHopRequest(&'static str),
}

fn join(v: &[StructuralViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Milliseconds since the Unix epoch from the system clock.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssueRequest {
    pub principal: Principal,
    pub scope: Scope,
    pub session_id: String,
    pub ttl_ms: Option<u64>,
    pub parent_token_id: Option<String>,
    /// Issuance time; defaults to the system clock.
    pub now: u64,
    /// Fixed token id for reproducible output; a random v4 UUID otherwise.
    pub token_id: Option<String>,
}

impl IssueRequest {
    pub fn new(principal: Principal, scope: Scope, session_id: impl Into<String>) -> Self {
        IssueRequest {
            principal,
            scope,
            session_id: session_id.into(),
            ttl_ms: None,
            parent_token_id: None,
            now: now_ms(),
            token_id: None,
        }
    }

    pub fn at(mut self, now: u64) -> Self {
        self.now = now;
        self
    }

    pub fn with_ttl_ms(mut self, ttl_ms: u64) -> Self {
        self.ttl_ms = Some(ttl_ms);
        self
    }

    pub fn with_token_id(mut self, token_id: impl Into<String>) -> Self {
        self.token_id = Some(token_id.into());
        self
    }

    pub fn with_parent(mut self, parent_token_id: impl Into<String>) -> Self {
        self.parent_token_id = Some(parent_token_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopRequest {
    pub agent_id: String,
    pub agent_type: String,
    pub agent_fingerprint: Option<String>,
    pub action_summary: String,
    /// Hop timestamp; the extension clock is used when absent.
    pub timestamp: Option<u64>,
}

impl HopRequest {
    pub fn new(
        agent_id: impl Into<String>,
        agent_type: impl Into<String>,
        action_summary: impl Into<String>,
    ) -> Self {
        HopRequest {
            agent_id: agent_id.into(),
            agent_type: agent_type.into(),
            agent_fingerprint: None,
            action_summary: action_summary.into(),
            timestamp: None,
        }
    }
}

fn root_payload_value(token: &Token) -> JsonValue {
    let mut o = JsonValue::object();
    o.insert("hdp", token.hdp.as_str().into());
    o.insert("header", token.header.to_json());
    o.insert("principal", token.principal.to_json());
    o.insert("scope", token.scope.to_json());
    o.insert("chain", JsonValue::Array(vec![]));
    o
}

/// Canonical bytes covered by the root signature: hdp, header, principal,
/// scope and an empty chain, with the signature key absent.
pub fn root_signing_payload(token: &Token) -> Result<Vec<u8>, LifecycleError> {
    if !token.chain.is_empty() {
        return Err(LifecycleError::ChainNotEmpty);
    }
    Ok(canonicalize(&root_payload_value(token)))
}

/// Root payload rebuilt from a received token, whatever its chain holds.
pub(crate) fn root_payload_ignoring_chain(token: &Token) -> Vec<u8> {
    canonicalize(&root_payload_value(token))
}

/// Canonical bytes of `[root_sig, hop_1, ..., hop_(n-1), new_hop]`, where the
/// prior hops keep their signatures and the new hop has none.
pub fn hop_signing_payload(
    root_sig_value: &str,
    prior_hops: &[Hop],
    new_hop: &Hop,
) -> Result<Vec<u8>, LifecycleError> {
    if let Some(h) = prior_hops.iter().find(|h| h.hop_signature.is_none()) {
        return Err(LifecycleError::PriorHopUnsigned(h.seq));
    }
    if new_hop.hop_signature.is_some() {
        return Err(LifecycleError::NewHopAlreadySigned);
    }
    let mut items = Vec::with_capacity(prior_hops.len() + 2);
    items.push(JsonValue::string(root_sig_value));
    items.extend(prior_hops.iter().map(Hop::to_json));
    items.push(new_hop.to_json());
    Ok(canonicalize(&JsonValue::Array(items)))
}

/// Issue a new token with an empty chain and a root signature from `key`.
pub fn issue(request: &IssueRequest, key: &KeyPair) -> Result<Token, LifecycleError> {
    let ttl = request.ttl_ms.unwrap_or(DEFAULT_TTL_MS);
    let mut violations = Vec::new();
    if ttl == 0 {
        violations.push(StructuralViolation::IssuedNotBeforeExpiry {
            issued_at: request.now,
            expires_at: request.now,
        });
    }
    let expires_at = request.now.saturating_add(ttl);
    if expires_at > MAX_SAFE_INTEGER {
        violations.push(StructuralViolation::TimestampTooLarge {
            field: "header.expires_at",
            value: expires_at,
        });
    }

    let mut token = Token {
        hdp: HDP_VERSION.to_owned(),
        header: Header {
            token_id: request
                .token_id
                .clone()
                .unwrap_or_else(|| Uuid::new_v4().to_string()),
            issued_at: request.now,
            expires_at,
            session_id: request.session_id.clone(),
            version: HDP_VERSION.to_owned(),
            parent_token_id: request.parent_token_id.clone(),
        },
        principal: request.principal.clone(),
        scope: request.scope.clone(),
        chain: Vec::new(),
        signature: SignatureBlock {
            kid: key.kid().to_owned(),
            alg: ALG_ED25519.to_owned(),
            value: String::new(),
        },
    };

    for v in validate_structure(&token) {
        let duplicate = violations.contains(&v);
        if !matches!(v, StructuralViolation::BadSignatureEncoding) && !duplicate {
            violations.push(v);
        }
    }
    if !violations.is_empty() {
        return Err(LifecycleError::InvalidRequest(violations));
    }

    let payload = root_signing_payload(&token)?;
    token.signature.value = key.sign(&payload).to_b64url();
    Ok(token)
}

/// Append a signed hop without any lifecycle guard (expiry, `max_hops`,
/// structure, key match).
///
/// This is the raw chaining primitive; [`extend`] is what agents should call.
/// Test harnesses use it to build tokens that verification must reject.
pub fn append_hop_unchecked(
    token: &Token,
    mut hop: Hop,
    key: &KeyPair,
) -> Result<Token, LifecycleError> {
    hop.hop_signature = None;
    let payload = hop_signing_payload(&token.signature.value, &token.chain, &hop)?;
    hop.hop_signature = Some(key.sign(&payload).to_b64url());
    let mut next = token.clone();
    next.chain.push(hop);
    Ok(next)
}

/// Extend the delegation chain by one hop.
///
/// Refuses structurally invalid or expired tokens and tokens whose chain has
/// reached `scope.max_hops`. The input token is left untouched.
pub fn extend(
    token: &Token,
    request: &HopRequest,
    key: &KeyPair,
    now: u64,
) -> Result<Token, LifecycleError> {
    let violations = validate_structure(token);
    if !violations.is_empty() {
        return Err(LifecycleError::StructurallyInvalid(violations));
    }
    if now >= token.header.expires_at {
        return Err(LifecycleError::TokenExpired {
            expires_at: token.header.expires_at,
            now,
        });
    }
    if let Some(max) = token.scope.max_hops {
        if token.chain.len() as u64 >= max {
            return Err(LifecycleError::MaxHopsReached(max));
        }
    }
    if key.kid() != token.signature.kid {
        return Err(LifecycleError::KeyMismatch {
            key_kid: key.kid().to_owned(),
            token_kid: token.signature.kid.clone(),
        });
    }
    if request.agent_id.is_empty() {
        return Err(LifecycleError::InvalidHopRequest("agent_id must not be empty"));
    }
    if request.action_summary.is_empty() {
        return Err(LifecycleError::InvalidHopRequest(
            "action_summary must not be empty",
        ));
    }
    let timestamp = request.timestamp.unwrap_or(now);
    if timestamp > MAX_SAFE_INTEGER {
        return Err(LifecycleError::InvalidHopRequest(
            "timestamp exceeds 2^53 - 1",
        ));
    }

    let n = token.chain.len() as u64;
    let hop = Hop {
        seq: n + 1,
        agent_id: request.agent_id.clone(),
        agent_type: request.agent_type.clone(),
        agent_fingerprint: request.agent_fingerprint.clone(),
        timestamp,
        action_summary: request.action_summary.clone(),
        parent: n,
        hop_signature: None,
    };
    append_hop_unchecked(token, hop, key)
}

/// Issue a successor token linked to `prior` through `parent_token_id`.
///
/// The session id is taken from `request` as given; lineage verification is
/// where shared sessions are checked.
pub fn reauthorize(
    prior: &Token,
    request: &IssueRequest,
    key: &KeyPair,
) -> Result<Token, LifecycleError> {
    let violations = validate_structure(prior);
    if !violations.is_empty() {
        return Err(LifecycleError::StructurallyInvalid(violations));
    }
    let mut request = request.clone();
    request.parent_token_id = Some(prior.header.token_id.clone());
    issue(&request, key)
}

/// Drop the principal for audit storage.
pub fn strip_for_audit(token: &Token) -> AuditRecord {
    AuditRecord {
        hdp: token.hdp.clone(),
        header: token.header.clone(),
        scope: token.scope.clone(),
        chain: token.chain.clone(),
        signature: token.signature.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Signature64;
    use crate::token::{Classification, IdType};

    const T0: u64 = 1_750_000_000_000;

    fn key() -> KeyPair {
        KeyPair::from_seed("issuer-1", [3u8; 32])
    }

    fn request() -> IssueRequest {
        IssueRequest::new(
            Principal::new("user-42", IdType::Opaque),
            Scope::new("Summarize the Q3 report", Classification::Internal),
            "sess-1",
        )
        .at(T0)
        .with_token_id("11111111-2222-4333-8444-555555555555")
    }

    #[test]
    fn root_payload_is_canonical_and_starts_with_chain() {
        let t = issue(&request(), &key()).unwrap();
        let payload = String::from_utf8(root_signing_payload(&t).unwrap()).unwrap();
        assert!(payload.starts_with(r#"{"chain":[],"hdp":"0.1","header":{"#));
        assert!(!payload.contains("signature"));
    }

    #[test]
    fn root_payload_refuses_nonempty_chain() {
        let t = issue(&request(), &key()).unwrap();
        let t = extend(&t, &HopRequest::new("a", "orchestrator", "plan"), &key(), T0).unwrap();
        assert_eq!(root_signing_payload(&t), Err(LifecycleError::ChainNotEmpty));
    }

    #[test]
    fn payload_depends_on_intent() {
        let a = issue(&request(), &key()).unwrap();
        let mut r = request();
        r.scope.intent.push('!');
        let b = issue(&r, &key()).unwrap();
        assert_ne!(root_signing_payload(&a), root_signing_payload(&b));
    }

    #[test]
    fn default_ttl_is_24_hours() {
        let t = issue(&request(), &key()).unwrap();
        assert_eq!(t.header.expires_at - t.header.issued_at, 86_400_000);
        assert_eq!(t.header.issued_at, T0);
        let t = issue(&request().with_ttl_ms(60_000), &key()).unwrap();
        assert_eq!(t.header.expires_at - t.header.issued_at, 60_000);
    }

    #[test]
    fn issued_root_signature_verifies() {
        let k = key();
        let t = issue(&request(), &k).unwrap();
        assert!(validate_structure(&t).is_empty());
        let sig = Signature64::from_b64url(&t.signature.value).unwrap();
        assert!(k.public_key().verify(&root_signing_payload(&t).unwrap(), &sig));
        assert_eq!(t.signature.kid, "issuer-1");
    }

    #[test]
    fn random_token_ids_are_v4() {
        let mut r = request();
        r.token_id = None;
        let a = issue(&r, &key()).unwrap();
        let b = issue(&r, &key()).unwrap();
        assert_ne!(a.header.token_id, b.header.token_id);
    }

    #[test]
    fn invalid_requests() {
        let mut r = request();
        r.scope.intent.clear();
        assert!(matches!(
            issue(&r, &key()),
            Err(LifecycleError::InvalidRequest(v)) if v == vec![StructuralViolation::EmptyIntent]
        ));
        assert!(matches!(
            issue(&request().with_ttl_ms(0), &key()),
            Err(LifecycleError::InvalidRequest(_))
        ));
        assert!(matches!(
            issue(&request().with_token_id("abc"), &key()),
            Err(LifecycleError::InvalidRequest(_))
        ));
        assert!(matches!(
            issue(&request().at(MAX_SAFE_INTEGER), &key()),
            Err(LifecycleError::InvalidRequest(_))
        ));
    }

    #[test]
    fn hop_payload_shapes() {
        let k = key();
        let t = issue(&request(), &k).unwrap();
        let h1 = Hop {
            seq: 1,
            agent_id: "a".into(),
            agent_type: "t".into(),
            agent_fingerprint: None,
            timestamp: T0,
            action_summary: "s".into(),
            parent: 0,
            hop_signature: None,
        };
        let p = crate::json::parse(&hop_signing_payload(&t.signature.value, &[], &h1).unwrap())
            .unwrap();
        let arr = p.as_array().unwrap();
        assert_eq!(arr.len(), 2);
        assert_eq!(arr[0].as_str(), Some(t.signature.value.as_str()));
        assert!(arr[1].get("hop_signature").is_none());

        assert_eq!(
            hop_signing_payload(&t.signature.value, &[h1.clone()], &h1),
            Err(LifecycleError::PriorHopUnsigned(1))
        );
        let mut signed = h1.clone();
        signed.hop_signature = Some("x".into());
        assert_eq!(
            hop_signing_payload(&t.signature.value, &[], &signed),
            Err(LifecycleError::NewHopAlreadySigned)
        );
    }

    #[test]
    fn extend_appends_and_preserves_prefix() {
        let k = key();
        let t0 = issue(&request(), &k).unwrap();
        let t1 = extend(&t0, &HopRequest::new("orch", "orchestrator", "plan"), &k, T0 + 1).unwrap();
        assert_eq!(t1.chain.len(), 1);
        assert_eq!((t1.chain[0].seq, t1.chain[0].parent), (1, 0));
        assert_eq!(t1.chain[0].timestamp, T0 + 1);
        let t2 = extend(&t1, &HopRequest::new("sub", "sub-agent", "fetch"), &k, T0 + 2).unwrap();
        assert_eq!((t2.chain[1].seq, t2.chain[1].parent), (2, 1));
        assert_eq!(t2.chain[0], t1.chain[0]);
        assert_eq!(t0.chain.len(), 0);
        assert_eq!(t2.signature, t0.signature);
    }

    #[test]
    fn extend_guards() {
        let k = key();
        let mut r = request();
        r.scope.max_hops = Some(2);
        let mut t = issue(&r, &k).unwrap();
        for i in 0..2 {
            t = extend(&t, &HopRequest::new("a", "t", "s"), &k, T0 + i).unwrap();
        }
        assert_eq!(
            extend(&t, &HopRequest::new("a", "t", "s"), &k, T0),
            Err(LifecycleError::MaxHopsReached(2))
        );

        let t = issue(&request().with_ttl_ms(10), &k).unwrap();
        assert!(matches!(
            extend(&t, &HopRequest::new("a", "t", "s"), &k, T0 + 10),
            Err(LifecycleError::TokenExpired { .. })
        ));

        let other = KeyPair::from_seed("other", [4u8; 32]);
        assert!(matches!(
            extend(&t, &HopRequest::new("a", "t", "s"), &other, T0),
            Err(LifecycleError::KeyMismatch { .. })
        ));

        assert!(matches!(
            extend(&t, &HopRequest::new("", "t", "s"), &k, T0),
            Err(LifecycleError::InvalidHopRequest(_))
        ));

        let mut broken = t.clone();
        broken.scope.data_classification = Classification::parse("secret");
        assert!(matches!(
            extend(&broken, &HopRequest::new("a", "t", "s"), &k, T0),
            Err(LifecycleError::StructurallyInvalid(_))
        ));
    }

    #[test]
    fn reauthorize_links_parent() {
        let k = key();
        let t1 = issue(&request(), &k).unwrap();
        let mut r = request().with_token_id("99999999-2222-4333-8444-555555555555");
        r.scope.intent = "Expanded scope".into();
        let t2 = reauthorize(&t1, &r, &k).unwrap();
        assert_eq!(
            t2.header.parent_token_id.as_deref(),
            Some(t1.header.token_id.as_str())
        );
        assert_eq!(t2.scope.intent, "Expanded scope");
    }

    #[test]
    fn deterministic_rebuild() {
        let a = issue(&request(), &key()).unwrap();
        let b = issue(&request(), &key()).unwrap();
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn strip_removes_principal() {
        let t = issue(&request(), &key()).unwrap();
        let rec = strip_for_audit(&t);
        let j = rec.to_json();
        assert!(j.get("principal").is_none());
        assert_eq!(j.get("audit_only").and_then(JsonValue::as_bool), Some(true));
    }
}
