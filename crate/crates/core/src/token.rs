//! The HDP token data model and its JSON schema.
//!
//! Types here carry no cryptography. [`validate_structure`] reports every
//! violated structural rule; [`Token::from_json`] enforces the strict schema
//! (unknown fields are rejected, absent optional fields stay absent).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;
use uuid::Uuid;

use crate::crypto::{b64url_decode, ALG_ED25519, SIGNATURE_LEN};
use crate::json::{JsonValue, MAX_SAFE_INTEGER};

/// Protocol version produced by this crate.
pub const HDP_VERSION: &str = "0.1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("field {field:?} must be {expected}")]
    WrongFieldType { field: String, expected: &'static str },
    #[error("unknown field {0:?}")]
    UnknownField(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub token_id: String,
    pub issued_at: u64,
    pub expires_at: u64,
    pub session_id: String,
    pub version: String,
    pub parent_token_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdType {
    Opaque,
    Email,
    Uuid,
    Did,
    Poh,
    /// A value outside the enumerated set; kept so the token round-trips and
    /// flagged by [`validate_structure`].
    Other(String),
}

impl IdType {
    pub fn as_str(&self) -> &str {
        match self {
            IdType::Opaque => "opaque",
            IdType::Email => "email",
            IdType::Uuid => "uuid",
            IdType::Did => "did",
            IdType::Poh => "poh",
            IdType::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "opaque" => IdType::Opaque,
            "email" => IdType::Email,
            "uuid" => IdType::Uuid,
            "did" => IdType::Did,
            "poh" => IdType::Poh,
            other => IdType::Other(other.to_owned()),
        }
    }
}

impl fmt::Display for IdType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub id: String,
    pub id_type: IdType,
    pub display_name: Option<String>,
    pub poh_credential: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classification {
    Public,
    Internal,
    Confidential,
    Restricted,
    Other(String),
}

impl Classification {
    pub fn as_str(&self) -> &str {
        match self {
            Classification::Public => "public",
            Classification::Internal => "internal",
            Classification::Confidential => "confidential",
            Classification::Restricted => "restricted",
            Classification::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "public" => Classification::Public,
            "internal" => Classification::Internal,
            "confidential" => Classification::Confidential,
            "restricted" => Classification::Restricted,
            other => Classification::Other(other.to_owned()),
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub intent: String,
    pub data_classification: Classification,
    pub network_egress: bool,
    pub persistence: bool,
    pub authorized_tools: Option<Vec<String>>,
    pub authorized_resources: Option<Vec<String>>,
    pub max_hops: Option<u64>,
}

impl Scope {
    /// A scope with only the required fields set.
    pub fn new(intent: impl Into<String>, data_classification: Classification) -> Self {
        Scope {
            intent: intent.into(),
            data_classification,
            network_egress: false,
            persistence: false,
            authorized_tools: None,
            authorized_resources: None,
            max_hops: None,
        }
    }
}

/// One delegation record in the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub seq: u64,
    pub agent_id: String,
    pub agent_type: String,
    pub agent_fingerprint: Option<String>,
    pub timestamp: u64,
    pub action_summary: String,
    pub parent: u64,
    /// Absent only while the hop is being signed.
    pub hop_signature: Option<String>,
}

impl Hop {
    pub fn unsigned(&self) -> Hop {
        Hop {
            hop_signature: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureBlock {
    pub kid: String,
    pub alg: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub hdp: String,
    pub header: Header,
    pub principal: Principal,
    pub scope: Scope,
    pub chain: Vec<Hop>,
    pub signature: SignatureBlock,
}

/// A token with its principal removed. Never accepted by verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub hdp: String,
    pub header: Header,
    pub scope: Scope,
    pub chain: Vec<Hop>,
    pub signature: SignatureBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuralViolation {
    VersionMismatch { hdp: String, header_version: String },
    BadTokenId(String),
    BadParentTokenId(String),
    TimestampTooLarge { field: &'static str, value: u64 },
    IssuedNotBeforeExpiry { issued_at: u64, expires_at: u64 },
    EmptyPrincipalId,
    BadIdType(String),
    EmptyIntent,
    BadClassification(String),
    BadMaxHops(u64),
    SeqGap { position: usize, expected: u64, found: u64 },
    DuplicateSeq { position: usize, seq: u64 },
    BadParent { seq: u64, parent: u64 },
    EmptyAgentId { seq: u64 },
    UnsignedHop { seq: u64 },
    BadHopSignatureEncoding { seq: u64 },
    BadAlg(String),
    BadSignatureEncoding,
}

impl StructuralViolation {
    /// The token field the violation is attached to.
    pub fn field(&self) -> &'static str {
        use StructuralViolation::*;
        match self {
            VersionMismatch { .. } => "header.version",
            BadTokenId(_) => "header.token_id",
            BadParentTokenId(_) => "header.parent_token_id",
            TimestampTooLarge { field, .. } => field,
            IssuedNotBeforeExpiry { .. } => "header.expires_at",
            EmptyPrincipalId => "principal.id",
            BadIdType(_) => "principal.id_type",
            EmptyIntent => "scope.intent",
            BadClassification(_) => "scope.data_classification",
            BadMaxHops(_) => "scope.max_hops",
            SeqGap { .. } | DuplicateSeq { .. } => "chain.seq",
            BadParent { .. } => "chain.parent",
            EmptyAgentId { .. } => "chain.agent_id",
            UnsignedHop { .. } | BadHopSignatureEncoding { .. } => "chain.hop_signature",
            BadAlg(_) => "signature.alg",
            BadSignatureEncoding => "signature.value",
        }
    }

    /// Whether the violation concerns chain sequencing (seq or parent).
    pub fn is_chain_sequence(&self) -> bool {
        matches!(
            self,
            StructuralViolation::SeqGap { .. }
                | StructuralViolation::DuplicateSeq { .. }
                | StructuralViolation::BadParent { .. }
        )
    }
}

impl fmt::Display for StructuralViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StructuralViolation::*;
        let field = self.field();
        match self {
            VersionMismatch { hdp, header_version } => write!(
                f,
                "{field}: {header_version:?} does not match top-level hdp {hdp:?}"
            ),
            BadTokenId(v) => write!(f, "{field}: {v:?} is not a UUID v4"),
            BadParentTokenId(v) => write!(f, "{field}: {v:?} is not a UUID"),
            TimestampTooLarge { value, .. } => {
                write!(f, "{field}: {value} exceeds 2^53 - 1")
            }
            IssuedNotBeforeExpiry {
                issued_at,
                expires_at,
            } => write!(
                f,
                "{field}: expires_at {expires_at} is not after issued_at {issued_at}"
            ),
            EmptyPrincipalId => write!(f, "{field}: must not be empty"),
            BadIdType(v) => write!(
                f,
                "{field}: {v:?} is not one of opaque, email, uuid, did, poh"
            ),
            EmptyIntent => write!(f, "{field}: must not be empty"),
            BadClassification(v) => write!(
                f,
                "{field}: {v:?} is not one of public, internal, confidential, restricted"
            ),
            BadMaxHops(v) => write!(f, "{field}: must be at least 1, got {v}"),
            SeqGap {
                position,
                expected,
                found,
            } => write!(
                f,
                "{field}: hop at index {position} has seq {found}, expected {expected}. \
                 Gaps in seq are a protocol violation"
            ),
            DuplicateSeq { position, seq } => {
                write!(f, "{field}: hop at index {position} repeats seq {seq}")
            }
            BadParent { seq, parent } => write!(
                f,
                "{field}: hop {seq} has parent {parent}; parent must precede the hop and \
                 the first hop's parent must be 0"
            ),
            EmptyAgentId { seq } => write!(f, "{field}: hop {seq} has an empty agent_id"),
            UnsignedHop { seq } => write!(f, "{field}: hop {seq} is unsigned"),
            BadHopSignatureEncoding { seq } => write!(
                f,
                "{field}: hop {seq} signature is not base64url of {SIGNATURE_LEN} bytes"
            ),
            BadAlg(v) => write!(f, "{field}: {v:?} is not \"{ALG_ED25519}\""),
            BadSignatureEncoding => {
                write!(f, "{field}: not base64url of {SIGNATURE_LEN} bytes")
            }
        }
    }
}

fn is_uuid_v4(s: &str) -> bool {
    Uuid::try_parse(s)
        .map(|u| u.get_version_num() == 4 && u.get_variant() == uuid::Variant::RFC4122)
        .unwrap_or(false)
}

fn is_signature_encoding(s: &str) -> bool {
    b64url_decode(s)
        .map(|b| b.len() == SIGNATURE_LEN)
        .unwrap_or(false)
}

fn check_header(hdp: &str, h: &Header, out: &mut Vec<StructuralViolation>) {
    use StructuralViolation::*;
    if h.version != hdp {
        out.push(VersionMismatch {
            hdp: hdp.to_owned(),
            header_version: h.version.clone(),
        });
    }
    if !is_uuid_v4(&h.token_id) {
        out.push(BadTokenId(h.token_id.clone()));
    }
    if let Some(p) = &h.parent_token_id {
        if Uuid::try_parse(p).is_err() {
            out.push(BadParentTokenId(p.clone()));
        }
    }
    for (field, value) in [
        ("header.issued_at", h.issued_at),
        ("header.expires_at", h.expires_at),
    ] {
        if value > MAX_SAFE_INTEGER {
            out.push(TimestampTooLarge { field, value });
        }
    }
    if h.issued_at >= h.expires_at {
        out.push(IssuedNotBeforeExpiry {
            issued_at: h.issued_at,
            expires_at: h.expires_at,
        });
    }
}

fn check_principal(p: &Principal, out: &mut Vec<StructuralViolation>) {
    if p.id.is_empty() {
        out.push(StructuralViolation::EmptyPrincipalId);
    }
    if let IdType::Other(v) = &p.id_type {
        out.push(StructuralViolation::BadIdType(v.clone()));
    }
}

fn check_scope(s: &Scope, out: &mut Vec<StructuralViolation>) {
    if s.intent.is_empty() {
        out.push(StructuralViolation::EmptyIntent);
    }
    if let Classification::Other(v) = &s.data_classification {
        out.push(StructuralViolation::BadClassification(v.clone()));
    }
    if s.max_hops == Some(0) {
        out.push(StructuralViolation::BadMaxHops(0));
    }
}

/// Sequence and parent rules only; these are what verification step 4 checks.
pub fn chain_sequence_violations(chain: &[Hop]) -> Vec<StructuralViolation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, hop) in chain.iter().enumerate() {
        let expected = i as u64 + 1;
        if hop.seq != expected {
            if seen.contains(&hop.seq) {
                out.push(StructuralViolation::DuplicateSeq {
                    position: i,
                    seq: hop.seq,
                });
            } else {
                out.push(StructuralViolation::SeqGap {
                    position: i,
                    expected,
                    found: hop.seq,
                });
            }
        }
        seen.insert(hop.seq);
        let parent_ok = if hop.seq == 1 {
            hop.parent == 0
        } else {
            hop.parent < hop.seq
        };
        if !parent_ok {
            out.push(StructuralViolation::BadParent {
                seq: hop.seq,
                parent: hop.parent,
            });
        }
    }
    out
}

fn check_chain(chain: &[Hop], out: &mut Vec<StructuralViolation>) {
    out.extend(chain_sequence_violations(chain));
    for hop in chain {
        if hop.agent_id.is_empty() {
            out.push(StructuralViolation::EmptyAgentId { seq: hop.seq });
        }
        if hop.timestamp > MAX_SAFE_INTEGER {
            out.push(StructuralViolation::TimestampTooLarge {
                field: "chain.timestamp",
                value: hop.timestamp,
            });
        }
        match &hop.hop_signature {
            None => out.push(StructuralViolation::UnsignedHop { seq: hop.seq }),
            Some(sig) if !is_signature_encoding(sig) => {
                out.push(StructuralViolation::BadHopSignatureEncoding { seq: hop.seq })
            }
            Some(_) => {}
        }
    }
}

fn check_signature(sig: &SignatureBlock, out: &mut Vec<StructuralViolation>) {
    if sig.alg != ALG_ED25519 {
        out.push(StructuralViolation::BadAlg(sig.alg.clone()));
    }
    if !is_signature_encoding(&sig.value) {
        out.push(StructuralViolation::BadSignatureEncoding);
    }
}

/// Every structural rule the token violates, in field order. No cryptography.
pub fn validate_structure(token: &Token) -> Vec<StructuralViolation> {
    let mut out = Vec::new();
    check_header(&token.hdp, &token.header, &mut out);
    check_principal(&token.principal, &mut out);
    check_scope(&token.scope, &mut out);
    check_chain(&token.chain, &mut out);
    check_signature(&token.signature, &mut out);
    out
}

/// Structural rules for an audit record (everything except the principal).
pub fn validate_audit_record(record: &AuditRecord) -> Vec<StructuralViolation> {
    let mut out = Vec::new();
    check_header(&record.hdp, &record.header, &mut out);
    check_scope(&record.scope, &mut out);
    check_chain(&record.chain, &mut out);
    check_signature(&record.signature, &mut out);
    out
}

// ---- JSON mapping -------------------------------------------------------

fn int(v: u64) -> JsonValue {
    JsonValue::number(v as f64).expect("u64 is finite")
}

fn str_list(items: &[String]) -> JsonValue {
    JsonValue::Array(items.iter().map(|s| JsonValue::string(s.as_str())).collect())
}

impl Header {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("token_id", self.token_id.as_str().into());
        o.insert("issued_at", int(self.issued_at));
        o.insert("expires_at", int(self.expires_at));
        o.insert("session_id", self.session_id.as_str().into());
        o.insert("version", self.version.as_str().into());
        if let Some(p) = &self.parent_token_id {
            o.insert("parent_token_id", p.as_str().into());
        }
        o
    }

    pub fn from_json(v: &JsonValue, path: &str) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, path)?;
        let h = Header {
            token_id: r.req_str("token_id")?,
            issued_at: r.req_u64("issued_at")?,
            expires_at: r.req_u64("expires_at")?,
            session_id: r.req_str("session_id")?,
            version: r.req_str("version")?,
            parent_token_id: r.opt_str("parent_token_id")?,
        };
        r.finish()?;
        Ok(h)
    }
}

impl Principal {
    pub fn new(id: impl Into<String>, id_type: IdType) -> Self {
        Principal {
            id: id.into(),
            id_type,
            display_name: None,
            poh_credential: None,
        }
    }

    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("id", self.id.as_str().into());
        o.insert("id_type", self.id_type.as_str().into());
        if let Some(d) = &self.display_name {
            o.insert("display_name", d.as_str().into());
        }
        if let Some(p) = &self.poh_credential {
            o.insert("poh_credential", p.as_str().into());
        }
        o
    }

    pub fn from_json(v: &JsonValue, path: &str) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, path)?;
        let p = Principal {
            id: r.req_str("id")?,
            id_type: IdType::parse(&r.req_str("id_type")?),
            display_name: r.opt_str("display_name")?,
            poh_credential: r.opt_str("poh_credential")?,
        };
        r.finish()?;
        Ok(p)
    }
}

impl Scope {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("intent", self.intent.as_str().into());
        o.insert(
            "data_classification",
            self.data_classification.as_str().into(),
        );
        o.insert("network_egress", self.network_egress.into());
        o.insert("persistence", self.persistence.into());
        if let Some(t) = &self.authorized_tools {
            o.insert("authorized_tools", str_list(t));
        }
        if let Some(r) = &self.authorized_resources {
            o.insert("authorized_resources", str_list(r));
        }
        if let Some(m) = self.max_hops {
            o.insert("max_hops", int(m));
        }
        o
    }

    pub fn from_json(v: &JsonValue, path: &str) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, path)?;
        let s = Scope {
            intent: r.req_str("intent")?,
            data_classification: Classification::parse(&r.req_str("data_classification")?),
            network_egress: r.req_bool("network_egress")?,
            persistence: r.req_bool("persistence")?,
            authorized_tools: r.opt_str_list("authorized_tools")?,
            authorized_resources: r.opt_str_list("authorized_resources")?,
            max_hops: r.opt_u64("max_hops")?,
        };
        r.finish()?;
        Ok(s)
    }
}

impl Hop {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("seq", int(self.seq));
        o.insert("agent_id", self.agent_id.as_str().into());
        o.insert("agent_type", self.agent_type.as_str().into());
        if let Some(fp) = &self.agent_fingerprint {
            o.insert("agent_fingerprint", fp.as_str().into());
        }
        o.insert("timestamp", int(self.timestamp));
        o.insert("action_summary", self.action_summary.as_str().into());
        o.insert("parent", int(self.parent));
        if let Some(sig) = &self.hop_signature {
            o.insert("hop_signature", sig.as_str().into());
        }
        o
    }

    pub fn from_json(v: &JsonValue, path: &str) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, path)?;
        let h = Hop {
            seq: r.req_u64("seq")?,
            agent_id: r.req_str("agent_id")?,
            agent_type: r.req_str("agent_type")?,
            agent_fingerprint: r.opt_str("agent_fingerprint")?,
            timestamp: r.req_u64("timestamp")?,
            action_summary: r.req_str("action_summary")?,
            parent: r.req_u64("parent")?,
            hop_signature: r.opt_str("hop_signature")?,
        };
        r.finish()?;
        Ok(h)
    }
}

impl SignatureBlock {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("kid", self.kid.as_str().into());
        o.insert("alg", self.alg.as_str().into());
        o.insert("value", self.value.as_str().into());
        o
    }

    pub fn from_json(v: &JsonValue, path: &str) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, path)?;
        let s = SignatureBlock {
            kid: r.req_str("kid")?,
            alg: r.req_str("alg")?,
            value: r.req_str("value")?,
        };
        r.finish()?;
        Ok(s)
    }
}

fn chain_to_json(chain: &[Hop]) -> JsonValue {
    JsonValue::Array(chain.iter().map(Hop::to_json).collect())
}

fn chain_from_json(r: &mut Reader<'_>) -> Result<Vec<Hop>, SchemaError> {
    let items = r.req("chain")?;
    let items = items.as_array().ok_or_else(|| SchemaError::WrongFieldType {
        field: r.path("chain"),
        expected: "an array",
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, h)| Hop::from_json(h, &format!("{}[{i}]", r.path("chain"))))
        .collect()
}

impl Token {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("hdp", self.hdp.as_str().into());
        o.insert("header", self.header.to_json());
        o.insert("principal", self.principal.to_json());
        o.insert("scope", self.scope.to_json());
        o.insert("chain", chain_to_json(&self.chain));
        o.insert("signature", self.signature.to_json());
        o
    }

    pub fn from_json(v: &JsonValue) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, "")?;
        let hdp = r.req_str("hdp")?;
        let header = Header::from_json(r.req("header")?, "header")?;
        let principal = Principal::from_json(r.req("principal")?, "principal")?;
        let scope = Scope::from_json(r.req("scope")?, "scope")?;
        let chain = chain_from_json(&mut r)?;
        let signature = SignatureBlock::from_json(r.req("signature")?, "signature")?;
        r.finish()?;
        Ok(Token {
            hdp,
            header,
            principal,
            scope,
            chain,
            signature,
        })
    }

    /// RFC 8785 bytes of the full token.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::json::canonicalize(&self.to_json())
    }

    pub fn token_id(&self) -> &str {
        &self.header.token_id
    }
}

impl AuditRecord {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("hdp", self.hdp.as_str().into());
        o.insert("header", self.header.to_json());
        o.insert("scope", self.scope.to_json());
        o.insert("chain", chain_to_json(&self.chain));
        o.insert("signature", self.signature.to_json());
        o.insert("audit_only", true.into());
        o
    }

    pub fn from_json(v: &JsonValue) -> Result<Self, SchemaError> {
        let mut r = Reader::new(v, "")?;
        if !r.req_bool("audit_only")? {
            return Err(SchemaError::WrongFieldType {
                field: "audit_only".into(),
                expected: "true",
            });
        }
        let hdp = r.req_str("hdp")?;
        let header = Header::from_json(r.req("header")?, "header")?;
        let scope = Scope::from_json(r.req("scope")?, "scope")?;
        let chain = chain_from_json(&mut r)?;
        let signature = SignatureBlock::from_json(r.req("signature")?, "signature")?;
        r.finish()?;
        Ok(AuditRecord {
            hdp,
            header,
            scope,
            chain,
            signature,
        })
    }
}

/// Strict object reader: tracks consumed keys so leftovers can be rejected.
struct Reader<'a> {
    map: &'a BTreeMap<String, JsonValue>,
    prefix: String,
    used: BTreeSet<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(v: &'a JsonValue, prefix: &str) -> Result<Self, SchemaError> {
        let map = v.as_object().ok_or_else(|| SchemaError::WrongFieldType {
            field: if prefix.is_empty() {
                "<root>".into()
            } else {
                prefix.into()
            },
            expected: "an object",
        })?;
        Ok(Reader {
            map,
            prefix: prefix.to_owned(),
            used: BTreeSet::new(),
        })
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn opt(&mut self, name: &'static str) -> Option<&'a JsonValue> {
        self.used.insert(name);
        self.map.get(name)
    }

    fn req(&mut self, name: &'static str) -> Result<&'a JsonValue, SchemaError> {
        self.opt(name)
            .ok_or_else(|| SchemaError::MissingField(self.path(name)))
    }

    fn wrong(&self, name: &str, expected: &'static str) -> SchemaError {
        SchemaError::WrongFieldType {
            field: self.path(name),
            expected,
        }
    }

    fn req_str(&mut self, name: &'static str) -> Result<String, SchemaError> {
        let v = self.req(name)?;
        v.as_str()
            .map(str::to_owned)
            .ok_or_else(|| self.wrong(name, "a string"))
    }

    fn opt_str(&mut self, name: &'static str) -> Result<Option<String>, SchemaError> {
        match self.opt(name) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_owned()))
                .ok_or_else(|| self.wrong(name, "a string")),
        }
    }

    fn req_bool(&mut self, name: &'static str) -> Result<bool, SchemaError> {
        let v = self.req(name)?;
        v.as_bool().ok_or_else(|| self.wrong(name, "a boolean"))
    }

    fn req_u64(&mut self, name: &'static str) -> Result<u64, SchemaError> {
        let v = self.req(name)?;
        v.as_u64()
            .ok_or_else(|| self.wrong(name, "a non-negative integer"))
    }

    fn opt_u64(&mut self, name: &'static str) -> Result<Option<u64>, SchemaError> {
        match self.opt(name) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| self.wrong(name, "a non-negative integer")),
        }
    }

    fn opt_str_list(&mut self, name: &'static str) -> Result<Option<Vec<String>>, SchemaError> {
        let Some(v) = self.opt(name) else {
            return Ok(None);
        };
        let items = v
            .as_array()
            .ok_or_else(|| self.wrong(name, "an array of strings"))?;
        items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| self.wrong(name, "an array of strings"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn finish(self) -> Result<(), SchemaError> {
        match self.map.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(extra) => Err(SchemaError::UnknownField(self.path(extra))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::json::parse_str;

    fn sig() -> String {
        crate::crypto::b64url_encode(&[0u8; 64])
    }

    fn hop(seq: u64, parent: u64) -> Hop {
        Hop {
            seq,
            agent_id: format!("agent-{seq}"),
            agent_type: "sub-agent".into(),
            agent_fingerprint: None,
            timestamp: 1_700_000_000_000 + seq,
            action_summary: "summarize".into(),
            parent,
            hop_signature: Some(sig()),
        }
    }

    fn token() -> Token {
        Token {
            hdp: HDP_VERSION.into(),
            header: Header {
                token_id: "6f1c2a3b-4d5e-4f60-8a7b-9c0d1e2f3a4b".into(),
                issued_at: 1_700_000_000_000,
                expires_at: 1_700_086_400_000,
                session_id: "sess-1".into(),
                version: HDP_VERSION.into(),
                parent_token_id: None,
            },
            principal: Principal::new("user-42", IdType::Opaque),
            scope: Scope::new("Summarize the Q3 report", Classification::Internal),
            chain: vec![],
            signature: SignatureBlock {
                kid: "k1".into(),
                alg: ALG_ED25519.into(),
                value: sig(),
            },
        }
    }

    #[test]
    fn well_formed_token_has_no_violations() {
        assert!(validate_structure(&token()).is_empty());
        let mut t = token();
        t.chain = vec![hop(1, 0), hop(2, 1), hop(3, 1)];
        assert!(validate_structure(&t).is_empty());
    }

    #[test]
    fn seq_gap_detected() {
        let mut t = token();
        t.chain = vec![hop(1, 0), hop(3, 1)];
        let v = validate_structure(&t);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], StructuralViolation::SeqGap { found: 3, .. }));
        assert!(v[0].to_string().contains("Gaps in seq are a protocol violation"));
    }

    #[test]
    fn duplicate_seq_and_bad_parent() {
        let mut t = token();
        t.chain = vec![hop(1, 0), hop(1, 0)];
        assert!(matches!(
            validate_structure(&t)[..],
            [StructuralViolation::DuplicateSeq { position: 1, seq: 1 }]
        ));
        t.chain = vec![hop(1, 1)];
        assert_eq!(
            validate_structure(&t),
            vec![StructuralViolation::BadParent { seq: 1, parent: 1 }]
        );
        t.chain = vec![hop(1, 0), hop(2, 2)];
        assert_eq!(
            validate_structure(&t),
            vec![StructuralViolation::BadParent { seq: 2, parent: 2 }]
        );
    }

    #[test]
    fn enumerations_checked() {
        let mut t = token();
        t.scope.data_classification = Classification::parse("secret");
        assert_eq!(
            validate_structure(&t),
            vec![StructuralViolation::BadClassification("secret".into())]
        );
        let mut t = token();
        t.principal.id_type = IdType::parse("passport");
        assert_eq!(
            validate_structure(&t),
            vec![StructuralViolation::BadIdType("passport".into())]
        );
    }

    #[test]
    fn violations_reported_in_field_order() {
        let mut t = token();
        t.hdp = "0.2".into();
        t.header.token_id = "not-a-uuid".into();
        t.header.expires_at = t.header.issued_at;
        t.principal.id.clear();
        t.scope.intent.clear();
        t.scope.max_hops = Some(0);
        t.signature.alg = "RS256".into();
        t.signature.value = "AA".into();
        let fields: Vec<_> = validate_structure(&t).iter().map(|v| v.field()).collect();
        assert_eq!(
            fields,
            [
                "header.version",
                "header.token_id",
                "header.expires_at",
                "principal.id",
                "scope.intent",
                "scope.max_hops",
                "signature.alg",
                "signature.value"
            ]
        );
    }

    #[test]
    fn uuid_v1_token_id_rejected_but_parent_any_uuid() {
        let mut t = token();
        t.header.token_id = "6f1c2a3b-4d5e-1f60-8a7b-9c0d1e2f3a4b".into();
        assert!(matches!(
            validate_structure(&t)[..],
            [StructuralViolation::BadTokenId(_)]
        ));
        let mut t = token();
        t.header.parent_token_id = Some("6f1c2a3b-4d5e-1f60-8a7b-9c0d1e2f3a4b".into());
        assert!(validate_structure(&t).is_empty());
    }

    #[test]
    fn json_round_trip_and_optional_omission() {
        let mut t = token();
        t.chain = vec![hop(1, 0)];
        let j = t.to_json();
        assert!(j.get("header").unwrap().get("parent_token_id").is_none());
        assert!(j.get("scope").unwrap().get("max_hops").is_none());
        assert_eq!(Token::from_json(&j).unwrap(), t);
    }

    #[test]
    fn schema_errors() {
        let mut j = token().to_json();
        j.as_object_mut().unwrap().remove("scope");
        assert_eq!(
            Token::from_json(&j),
            Err(SchemaError::MissingField("scope".into()))
        );

        let mut j = token().to_json();
        j.insert("foo", JsonValue::Null);
        assert_eq!(
            Token::from_json(&j),
            Err(SchemaError::UnknownField("foo".into()))
        );

        let mut j = token().to_json();
        j.as_object_mut()
            .unwrap()
            .get_mut("header")
            .unwrap()
            .insert("extra", true.into());
        assert_eq!(
            Token::from_json(&j),
            Err(SchemaError::UnknownField("header.extra".into()))
        );

        let j = parse_str(
            &token()
                .to_json()
                .to_canonical_string()
                .replace("\"network_egress\":false", "\"network_egress\":\"no\""),
        )
        .unwrap();
        assert!(matches!(
            Token::from_json(&j),
            Err(SchemaError::WrongFieldType { field, .. }) if field == "scope.network_egress"
        ));

        assert!(Token::from_json(&JsonValue::Null).is_err());
    }

    #[test]
    fn fractional_timestamps_rejected() {
        let text = token()
            .to_json()
            .to_canonical_string()
            .replace("1700000000000", "1700000000000.5");
        assert!(matches!(
            Token::from_json(&parse_str(&text).unwrap()),
            Err(SchemaError::WrongFieldType { .. })
        ));
    }

    #[test]
    fn audit_record_json() {
        let t = token();
        let rec = AuditRecord {
            hdp: t.hdp.clone(),
            header: t.header.clone(),
            scope: t.scope.clone(),
            chain: vec![],
            signature: t.signature.clone(),
        };
        let j = rec.to_json();
        assert_eq!(j.get("audit_only"), Some(&JsonValue::Bool(true)));
        assert!(j.get("principal").is_none());
        assert_eq!(AuditRecord::from_json(&j).unwrap(), rec);
        assert!(Token::from_json(&j).is_err());
        assert!(validate_audit_record(&rec).is_empty());
    }
}
