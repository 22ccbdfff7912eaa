//! Offline token verification.
//!
//! [`verify_token`] runs seven ordered checks and stops at the first failure:
//!
//! 1. version: `hdp` is supported and matches `header.version`
//! 2. expiry: `now < expires_at + clock_skew_ms`
//! 3. root signature over header, principal, scope and an empty chain
//! 4. chain sequence: seq runs `1..=n`, parents point backwards
//! 5. hop signatures, ascending
//! 6. chain length against `scope.max_hops`
//! 7. session binding
//!
//! The only inputs are the token and a [`SessionContext`]. Nothing in this
//! module performs I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{PublicKey, Signature64};
use crate::json::{self, JsonValue};
use crate::lifecycle::{hop_signing_payload, root_payload_ignoring_chain};
use crate::token::{chain_sequence_violations, Token, HDP_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("issuer key set is empty")]
    NoIssuerKeys,
    #[error("duplicate issuer kid {0:?}")]
    DuplicateKid(String),
}

/// Verifier-side trust state.
#[derive(Debug, Clone)]
pub struct SessionContext {
    issuer_keys: BTreeMap<String, PublicKey>,
    pub current_session_id: String,
    pub now: u64,
    pub clock_skew_ms: u64,
    pub supported_versions: BTreeSet<String>,
    /// Also reject tokens whose `issued_at` lies beyond `now + clock_skew_ms`.
    pub reject_future_issued: bool,
}

impl SessionContext {
    pub fn new(
        issuer_keys: impl IntoIterator<Item = PublicKey>,
        current_session_id: impl Into<String>,
        now: u64,
    ) -> Result<Self, ContextError> {
        let mut keys = BTreeMap::new();
        for k in issuer_keys {
            if keys.contains_key(k.kid()) {
                return Err(ContextError::DuplicateKid(k.kid().to_owned()));
            }
            keys.insert(k.kid().to_owned(), k);
        }
        if keys.is_empty() {
            return Err(ContextError::NoIssuerKeys);
        }
        Ok(SessionContext {
            issuer_keys: keys,
            current_session_id: current_session_id.into(),
            now,
            clock_skew_ms: 0,
            supported_versions: BTreeSet::from([HDP_VERSION.to_owned()]),
            reject_future_issued: false,
        })
    }

    pub fn with_clock_skew_ms(mut self, skew: u64) -> Self {
        self.clock_skew_ms = skew;
        self
    }

    pub fn issuer_key(&self, kid: &str) -> Option<&PublicKey> {
        self.issuer_keys.get(kid)
    }

    pub fn issuer_keys(&self) -> impl Iterator<Item = &PublicKey> {
        self.issuer_keys.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Version = 1,
    Expiry = 2,
    RootSignature = 3,
    ChainSequence = 4,
    HopSignatures = 5,
    MaxHops = 6,
    SessionBinding = 7,
}

impl Step {
    pub const ALL: [Step; 7] = [
        Step::Version,
        Step::Expiry,
        Step::RootSignature,
        Step::ChainSequence,
        Step::HopSignatures,
        Step::MaxHops,
        Step::SessionBinding,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Step::Version => "version",
            Step::Expiry => "expiry",
            Step::RootSignature => "root_signature",
            Step::ChainSequence => "chain_sequence",
            Step::HopSignatures => "hop_signatures",
            Step::MaxHops => "max_hops",
            Step::SessionBinding => "session_binding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureReason {
    UnsupportedVersion,
    Expired,
    /// Only produced when [`SessionContext::reject_future_issued`] is set.
    IssuedInFuture,
    RootSignatureInvalid,
    UnknownKid,
    ChainSequenceViolation,
    HopSignatureInvalid,
    MaxHopsExceeded,
    SessionMismatch,
    Malformed,
}

impl FailureReason {
    pub const ALL: [FailureReason; 10] = [
        FailureReason::UnsupportedVersion,
        FailureReason::Expired,
        FailureReason::IssuedInFuture,
        FailureReason::RootSignatureInvalid,
        FailureReason::UnknownKid,
        FailureReason::ChainSequenceViolation,
        FailureReason::HopSignatureInvalid,
        FailureReason::MaxHopsExceeded,
        FailureReason::SessionMismatch,
        FailureReason::Malformed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::UnsupportedVersion => "UnsupportedVersion",
            FailureReason::Expired => "Expired",
            FailureReason::IssuedInFuture => "IssuedInFuture",
            FailureReason::RootSignatureInvalid => "RootSignatureInvalid",
            FailureReason::UnknownKid => "UnknownKid",
            FailureReason::ChainSequenceViolation => "ChainSequenceViolation",
            FailureReason::HopSignatureInvalid => "HopSignatureInvalid",
            FailureReason::MaxHopsExceeded => "MaxHopsExceeded",
            FailureReason::SessionMismatch => "SessionMismatch",
            FailureReason::Malformed => "Malformed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub step: Step,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub passed: bool,
    pub failed_step: Option<u8>,
    pub reason: Option<FailureReason>,
    pub failing_hop_seq: Option<u64>,
    pub detail: Option<String>,
    pub steps_executed: Vec<StepOutcome>,
}

impl VerificationReport {
    fn pass(steps_executed: Vec<StepOutcome>) -> Self {
        VerificationReport {
            passed: true,
            failed_step: None,
            reason: None,
            failing_hop_seq: None,
            detail: None,
            steps_executed,
        }
    }

    fn fail(
        mut steps_executed: Vec<StepOutcome>,
        step: Step,
        reason: FailureReason,
        failing_hop_seq: Option<u64>,
        detail: String,
    ) -> Self {
        steps_executed.push(StepOutcome {
            step,
            passed: false,
        });
        VerificationReport {
            passed: false,
            failed_step: Some(step.number()),
            reason: Some(reason),
            failing_hop_seq,
            detail: Some(detail),
            steps_executed,
        }
    }

    pub(crate) fn malformed(detail: String) -> Self {
        Self::fail(
            Vec::new(),
            Step::Version,
            FailureReason::Malformed,
            None,
            detail,
        )
    }

    /// One-line summary, e.g. `step 7 SessionMismatch: ...`.
    pub fn summary(&self) -> String {
        match (self.failed_step, self.reason) {
            (Some(step), Some(reason)) => {
                let mut s = format!("step {step} {reason}");
                if let Some(seq) = self.failing_hop_seq {
                    s.push_str(&format!(" (hop {seq})"));
                }
                if let Some(d) = &self.detail {
                    s.push_str(": ");
                    s.push_str(d);
                }
                s
            }
            _ => format!("passed all {} steps", self.steps_executed.len()),
        }
    }

    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("passed", self.passed.into());
        if let Some(s) = self.failed_step {
            o.insert("failed_step", JsonValue::from(u32::from(s)));
        }
        if let Some(r) = self.reason {
            o.insert("reason", r.as_str().into());
        }
        if let Some(seq) = self.failing_hop_seq {
            o.insert("failing_hop_seq", JsonValue::number(seq as f64).expect("finite"));
        }
        if let Some(d) = &self.detail {
            o.insert("detail", d.as_str().into());
        }
        o.insert(
            "steps_executed",
            JsonValue::Array(
                self.steps_executed
                    .iter()
                    .map(|s| {
                        let mut e = JsonValue::object();
                        e.insert("step", JsonValue::from(u32::from(s.step.number())));
                        e.insert("name", s.step.name().into());
                        e.insert("passed", s.passed.into());
                        e
                    })
                    .collect(),
            ),
        );
        o
    }
}

fn decode_sig(value: &str) -> Option<Signature64> {
    Signature64::from_b64url(value).ok()
}

/// Run the seven-step pipeline. Failures are report values, never errors.
pub fn verify_token(token: &Token, ctx: &SessionContext) -> VerificationReport {
    let mut done = Vec::with_capacity(7);
    let ok = |done: &mut Vec<StepOutcome>, step| done.push(StepOutcome { step, passed: true });

    // 1
    if !ctx.supported_versions.contains(&token.hdp) {
        return VerificationReport::fail(
            done,
            Step::Version,
            FailureReason::UnsupportedVersion,
            None,
            format!("hdp version {:?} is not supported", token.hdp),
        );
    }
    if token.header.version != token.hdp {
        return VerificationReport::fail(
            done,
            Step::Version,
            FailureReason::UnsupportedVersion,
            None,
            format!(
                "header.version {:?} does not match hdp {:?}",
                token.header.version, token.hdp
            ),
        );
    }
    ok(&mut done, Step::Version);

    // 2
    let deadline = token.header.expires_at.saturating_add(ctx.clock_skew_ms);
    if ctx.now >= deadline {
        return VerificationReport::fail(
            done,
            Step::Expiry,
            FailureReason::Expired,
            None,
            format!("expired at {} (now {})", token.header.expires_at, ctx.now),
        );
    }
    if ctx.reject_future_issued
        && token.header.issued_at > ctx.now.saturating_add(ctx.clock_skew_ms)
    {
        return VerificationReport::fail(
            done,
            Step::Expiry,
            FailureReason::IssuedInFuture,
            None,
            format!("issued_at {} is after now {}", token.header.issued_at, ctx.now),
        );
    }
    ok(&mut done, Step::Expiry);

    // 3
    let Some(issuer) = ctx.issuer_key(&token.signature.kid) else {
        return VerificationReport::fail(
            done,
            Step::RootSignature,
            FailureReason::UnknownKid,
            None,
            format!("no issuer key with kid {:?}", token.signature.kid),
        );
    };
    let root_ok = token.signature.alg == crate::crypto::ALG_ED25519
        && decode_sig(&token.signature.value)
            .is_some_and(|sig| issuer.verify(&root_payload_ignoring_chain(token), &sig));
    if !root_ok {
        return VerificationReport::fail(
            done,
            Step::RootSignature,
            FailureReason::RootSignatureInvalid,
            None,
            "root signature does not verify".into(),
        );
    }
    ok(&mut done, Step::RootSignature);

    // 4
    if let Some(v) = chain_sequence_violations(&token.chain).first() {
        return VerificationReport::fail(
            done,
            Step::ChainSequence,
            FailureReason::ChainSequenceViolation,
            None,
            v.to_string(),
        );
    }
    ok(&mut done, Step::ChainSequence);

    // 5
    for (i, hop) in token.chain.iter().enumerate() {
        let valid = hop.hop_signature.as_deref().and_then(decode_sig).is_some_and(|sig| {
            hop_signing_payload(&token.signature.value, &token.chain[..i], &hop.unsigned())
                .is_ok_and(|payload| issuer.verify(&payload, &sig))
        });
        if !valid {
            return VerificationReport::fail(
                done,
                Step::HopSignatures,
                FailureReason::HopSignatureInvalid,
                Some(hop.seq),
                format!("hop {} signature does not verify", hop.seq),
            );
        }
    }
    ok(&mut done, Step::HopSignatures);

    // 6
    if let Some(max) = token.scope.max_hops {
        if token.chain.len() as u64 > max {
            return VerificationReport::fail(
                done,
                Step::MaxHops,
                FailureReason::MaxHopsExceeded,
                None,
                format!("chain has {} hops, max_hops is {max}", token.chain.len()),
            );
        }
    }
    ok(&mut done, Step::MaxHops);

    // 7
    if token.header.session_id != ctx.current_session_id {
        return VerificationReport::fail(
            done,
            Step::SessionBinding,
            FailureReason::SessionMismatch,
            None,
            format!(
                "token session {:?} is not the current session {:?}",
                token.header.session_id, ctx.current_session_id
            ),
        );
    }
    ok(&mut done, Step::SessionBinding);

    VerificationReport::pass(done)
}

/// Verify a token still in JSON form. Anything that does not decode to a
/// token (including audit-only records) fails at step 1 as `Malformed`.
pub fn verify_token_json(value: &JsonValue, ctx: &SessionContext) -> VerificationReport {
    if value.get("audit_only").is_some() {
        return VerificationReport::malformed(
            "audit-only record; principal removed, not verifiable".into(),
        );
    }
    match Token::from_json(value) {
        Ok(token) => verify_token(&token, ctx),
        Err(e) => VerificationReport::malformed(e.to_string()),
    }
}

pub fn verify_token_bytes(bytes: &[u8], ctx: &SessionContext) -> VerificationReport {
    match json::parse(bytes) {
        Ok(v) => verify_token_json(&v, ctx),
        Err(e) => VerificationReport::malformed(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineageFailure {
    /// A member token failed its own verification.
    TokenInvalid { index: usize },
    LinkageBroken {
        index: usize,
        expected_parent: String,
        found: Option<String>,
    },
    SessionMismatch { index: usize },
    Empty,
}

impl LineageFailure {
    pub fn kind(&self) -> &'static str {
        match self {
            LineageFailure::TokenInvalid { .. } => "TokenInvalid",
            LineageFailure::LinkageBroken { .. } => "LinkageBroken",
            LineageFailure::SessionMismatch { .. } => "SessionMismatch",
            LineageFailure::Empty => "Empty",
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            LineageFailure::TokenInvalid { index }
            | LineageFailure::LinkageBroken { index, .. }
            | LineageFailure::SessionMismatch { index } => Some(*index),
            LineageFailure::Empty => None,
        }
    }
}

impl fmt::Display for LineageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineageFailure::TokenInvalid { index } => {
                write!(f, "token {index} failed verification")
            }
            LineageFailure::LinkageBroken {
                index,
                expected_parent,
                found,
            } => write!(
                f,
                "token {index} parent_token_id is {found:?}, expected {expected_parent:?}"
            ),
            LineageFailure::SessionMismatch { index } => {
                write!(f, "token {index} is bound to a different session")
            }
            LineageFailure::Empty => write!(f, "lineage is empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageReport {
    pub passed: bool,
    pub token_reports: Vec<VerificationReport>,
    /// First failure found: linkage, then session divergence, then member tokens.
    pub failure: Option<LineageFailure>,
}

/// Verify an oldest-first list of tokens linked by `parent_token_id`.
///
/// Each token is verified on its own against `ctx`; then every successor must
/// name its predecessor as parent and all tokens must share one session id.
pub fn verify_lineage(tokens: &[Token], ctx: &SessionContext) -> LineageReport {
    let token_reports: Vec<_> = tokens.iter().map(|t| verify_token(t, ctx)).collect();
    let failure = lineage_failure(tokens, &token_reports);
    LineageReport {
        passed: failure.is_none(),
        token_reports,
        failure,
    }
}

fn lineage_failure(tokens: &[Token], reports: &[VerificationReport]) -> Option<LineageFailure> {
    let Some(first) = tokens.first() else {
        return Some(LineageFailure::Empty);
    };
    // Session divergence is reported as a lineage failure even though the
    // diverging token's own step 7 fails too.
    for (i, pair) in tokens.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.header.parent_token_id.as_deref() != Some(prev.header.token_id.as_str()) {
            return Some(LineageFailure::LinkageBroken {
                index: i + 1,
                expected_parent: prev.header.token_id.clone(),
                found: next.header.parent_token_id.clone(),
            });
        }
    }
    if let Some(i) = tokens
        .iter()
        .position(|t| t.header.session_id != first.header.session_id)
    {
        return Some(LineageFailure::SessionMismatch { index: i });
    }
    if let Some(i) = reports.iter().position(|r| !r.passed) {
        if reports[i].reason == Some(FailureReason::SessionMismatch) {
            return Some(LineageFailure::SessionMismatch { index: i });
        }
        return Some(LineageFailure::TokenInvalid { index: i });
    }
    None
}

/// Proof-of-Humanity credential check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PohStatus {
    NotConfigured,
}

/// Optional eighth check; no credential validator is configured, and the
/// seven-step pipeline never calls this.
pub fn check_poh(_token: &Token, _ctx: &SessionContext) -> PohStatus {
    PohStatus::NotConfigured
}
