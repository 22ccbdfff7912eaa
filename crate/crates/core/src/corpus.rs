//! Golden conformance cases.
//!
//! Each case is a self-describing JSON document. Token cases carry the
//! inputs needed to regenerate their token (issuer seed, fixed clock and
//! token id, request fields), the expected canonical token, and a list of
//! mutations with the verification outcome each must produce. Mutations are
//! JSON Pointer edits (`set`, `remove`, `insert`) or a `raw` replacement of
//! the whole document, so another implementation can replay them without
//! sharing any code with this one.
//!
//! Expected outcomes are written down by hand when cases are built, never
//! computed by running the verifier.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey, Signature64};
use crate::json::{self, JsonValue};
use crate::lifecycle::{
    append_hop_unchecked, extend, issue, reauthorize, strip_for_audit, HopRequest, IssueRequest,
};
use crate::token::{Classification, Hop, IdType, Principal, Scope, Token};
use crate::transport::{parse_wellknown, render_wellknown};
use crate::verify::{
    verify_lineage, verify_token_bytes, verify_token_json, FailureReason, SessionContext,
    VerificationReport,
};

/// Base clock shared by every golden token.
pub const CORPUS_CLOCK: u64 = 1_750_000_000_000;
const CORPUS_SEED: u64 = 0x4844_5000_0001;
const VERIFY_AT: u64 = CORPUS_CLOCK + 60_000;
const SESSION: &str = "sess-corpus-current";
const PRIOR_SESSION: &str = "sess-corpus-prior";

/// Size bounds recorded with the 10-hop case.
pub const TEN_HOP_SIZE_BOUNDS: (usize, usize) = (2048, 16384);

const RFC8032_VECTORS: &str = include_str!("../data/rfc8032.txt");
const RFC8785_SAMPLE_IN: &str = include_str!("../data/rfc8785_sample.json");
const RFC8785_SAMPLE_OUT: &str = include_str!("../data/rfc8785_sample.canonical");
const RFC8785_SORT_IN: &str = include_str!("../data/rfc8785_sort.json");
const RFC8785_SORT_OUT: &str = include_str!("../data/rfc8785_sort.canonical");
const RFC8785_NUMBERS: &str = include_str!("../data/rfc8785_numbers.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus I/O at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corpus directory {0} holds no case files")]
    Empty(PathBuf),
}

/// Outcome of one case file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: Vec<String>,
}

struct Checker {
    checks: usize,
    failures: Vec<String>,
}

impl Checker {
    fn new() -> Self {
        Checker {
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn fail(&mut self, what: String) {
        self.checks += 1;
        self.failures.push(what);
    }
}

// ---------------------------------------------------------------------------
// Small JSON helpers

fn obj<const N: usize>(fields: [(&str, JsonValue); N]) -> JsonValue {
    let mut o = JsonValue::object();
    for (k, v) in fields {
        o.insert(k, v);
    }
    o
}

fn int(v: u64) -> JsonValue {
    JsonValue::integer(v).expect("corpus integers are below 2^53")
}

fn field<'a>(v: &'a JsonValue, name: &str) -> Result<&'a JsonValue, String> {
    v.get(name).ok_or_else(|| format!("missing field {name:?}"))
}

fn str_field<'a>(v: &'a JsonValue, name: &str) -> Result<&'a str, String> {
    field(v, name)?
        .as_str()
        .ok_or_else(|| format!("field {name:?} must be a string"))
}

fn u64_field(v: &JsonValue, name: &str) -> Result<u64, String> {
    field(v, name)?
        .as_u64()
        .ok_or_else(|| format!("field {name:?} must be a non-negative integer"))
}

fn opt_u64(v: &JsonValue, name: &str) -> Result<Option<u64>, String> {
    match v.get(name) {
        None | Some(JsonValue::Null) => Ok(None),
        Some(_) => u64_field(v, name).map(Some),
    }
}

fn opt_str(v: &JsonValue, name: &str) -> Result<Option<String>, String> {
    match v.get(name) {
        None | Some(JsonValue::Null) => Ok(None),
        Some(_) => str_field(v, name).map(|s| Some(s.to_owned())),
    }
}

fn array_field<'a>(v: &'a JsonValue, name: &str) -> Result<&'a [JsonValue], String> {
    field(v, name)?
        .as_array()
        .ok_or_else(|| format!("field {name:?} must be an array"))
}

fn hex_decode(s: &str) -> Result<Vec<u8>, String> {
    hex::decode(s).map_err(|e| format!("bad hex: {e}"))
}

// ---------------------------------------------------------------------------
// Token inputs

#[derive(Debug, Clone)]
struct TokenSpec {
    issuer: KeyPair,
    request: IssueRequest,
    hops: Vec<HopRequest>,
    /// Append hops without lifecycle guards (used to exceed `max_hops`).
    unchecked: bool,
}

impl TokenSpec {
    fn build(&self) -> Result<Token, String> {
        let mut token = issue(&self.request, &self.issuer).map_err(|e| e.to_string())?;
        for req in &self.hops {
            let ts = req.timestamp.ok_or("hop inputs need a timestamp")?;
            token = if self.unchecked {
                let n = token.chain.len() as u64;
                let hop = Hop {
                    seq: n + 1,
                    agent_id: req.agent_id.clone(),
                    agent_type: req.agent_type.clone(),
                    agent_fingerprint: req.agent_fingerprint.clone(),
                    timestamp: ts,
                    action_summary: req.action_summary.clone(),
                    parent: n,
                    hop_signature: None,
                };
                append_hop_unchecked(&token, hop, &self.issuer)
            } else {
                extend(&token, req, &self.issuer, ts)
            }
            .map_err(|e| e.to_string())?;
        }
        Ok(token)
    }

    fn to_json(&self) -> JsonValue {
        let r = &self.request;
        let mut request = obj([
            ("principal", r.principal.to_json()),
            ("scope", r.scope.to_json()),
            ("session_id", r.session_id.as_str().into()),
            ("issued_at", int(r.now)),
            (
                "token_id",
                r.token_id.as_deref().expect("golden tokens use fixed ids").into(),
            ),
        ]);
        if let Some(ttl) = r.ttl_ms {
            request.insert("ttl_ms", int(ttl));
        }
        if let Some(p) = &r.parent_token_id {
            request.insert("parent_token_id", p.as_str().into());
        }
        let hops = self
            .hops
            .iter()
            .map(|h| {
                let mut o = obj([
                    ("agent_id", h.agent_id.as_str().into()),
                    ("agent_type", h.agent_type.as_str().into()),
                    ("action_summary", h.action_summary.as_str().into()),
                    ("timestamp", int(h.timestamp.expect("golden hops are timestamped"))),
                ]);
                if let Some(fp) = &h.agent_fingerprint {
                    o.insert("agent_fingerprint", fp.as_str().into());
                }
                o
            })
            .collect();
        obj([
            (
                "issuer",
                obj([
                    ("kid", self.issuer.kid().into()),
                    ("seed", hex::encode(self.issuer.seed()).into()),
                    ("public_key", self.issuer.public_key().to_b64url().into()),
                ]),
            ),
            ("request", request),
            ("hops", JsonValue::Array(hops)),
            ("append_unchecked", self.unchecked.into()),
        ])
    }

    fn from_json(v: &JsonValue) -> Result<Self, String> {
        let issuer = field(v, "issuer")?;
        let seed: [u8; 32] = hex_decode(str_field(issuer, "seed")?)?
            .try_into()
            .map_err(|_| "issuer seed must be 32 bytes".to_owned())?;
        let key = KeyPair::from_seed(str_field(issuer, "kid")?, seed);
        if let Some(pk) = issuer.get("public_key").and_then(JsonValue::as_str) {
            if pk != key.public_key().to_b64url() {
                return Err("issuer public_key does not match its seed".into());
            }
        }
        let r = field(v, "request")?;
        let mut request = IssueRequest::new(
            Principal::from_json(field(r, "principal")?, "principal").map_err(|e| e.to_string())?,
            Scope::from_json(field(r, "scope")?, "scope").map_err(|e| e.to_string())?,
            str_field(r, "session_id")?,
        )
        .at(u64_field(r, "issued_at")?)
        .with_token_id(str_field(r, "token_id")?);
        request.ttl_ms = opt_u64(r, "ttl_ms")?;
        request.parent_token_id = opt_str(r, "parent_token_id")?;
        let hops = array_field(v, "hops")?
            .iter()
            .map(|h| {
                let mut req = HopRequest::new(
                    str_field(h, "agent_id")?,
                    str_field(h, "agent_type")?,
                    str_field(h, "action_summary")?,
                );
                req.agent_fingerprint = opt_str(h, "agent_fingerprint")?;
                req.timestamp = Some(u64_field(h, "timestamp")?);
                Ok(req)
            })
            .collect::<Result<_, String>>()?;
        let unchecked = v
            .get("append_unchecked")
            .and_then(JsonValue::as_bool)
            .unwrap_or(false);
        Ok(TokenSpec {
            issuer: key,
            request,
            hops,
            unchecked,
        })
    }
}

// ---------------------------------------------------------------------------
// Verification context

#[derive(Debug, Clone)]
struct ContextSpec {
    keys: Vec<PublicKey>,
    session_id: String,
    now: u64,
    clock_skew_ms: u64,
    reject_future_issued: bool,
}

impl ContextSpec {
    fn new(keys: Vec<PublicKey>, session_id: &str, now: u64) -> Self {
        ContextSpec {
            keys,
            session_id: session_id.to_owned(),
            now,
            clock_skew_ms: 0,
            reject_future_issued: false,
        }
    }

    fn to_json(&self) -> JsonValue {
        obj([
            (
                "issuer_keys",
                JsonValue::Array(self.keys.iter().map(PublicKey::to_key_file).collect()),
            ),
            ("session_id", self.session_id.as_str().into()),
            ("now", int(self.now)),
            ("clock_skew_ms", int(self.clock_skew_ms)),
            ("reject_future_issued", self.reject_future_issued.into()),
        ])
    }

    fn from_json(v: &JsonValue) -> Result<Self, String> {
        let keys = array_field(v, "issuer_keys")?
            .iter()
            .map(|k| PublicKey::from_key_file(k).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let mut ctx = ContextSpec::new(keys, str_field(v, "session_id")?, u64_field(v, "now")?);
        ctx.apply(v)?;
        Ok(ctx)
    }

    /// Overlay whichever fields `v` carries.
    fn apply(&mut self, v: &JsonValue) -> Result<(), String> {
        if v.get("issuer_keys").is_some() {
            self.keys = array_field(v, "issuer_keys")?
                .iter()
                .map(|k| PublicKey::from_key_file(k).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
        }
        if let Some(s) = opt_str(v, "session_id")? {
            self.session_id = s;
        }
        if let Some(n) = opt_u64(v, "now")? {
            self.now = n;
        }
        if let Some(n) = opt_u64(v, "clock_skew_ms")? {
            self.clock_skew_ms = n;
        }
        if let Some(b) = v.get("reject_future_issued") {
            self.reject_future_issued = b
                .as_bool()
                .ok_or("reject_future_issued must be a boolean")?;
        }
        Ok(())
    }

    fn build(&self) -> Result<SessionContext, String> {
        let mut ctx = SessionContext::new(self.keys.clone(), self.session_id.clone(), self.now)
            .map_err(|e| e.to_string())?
            .with_clock_skew_ms(self.clock_skew_ms);
        ctx.reject_future_issued = self.reject_future_issued;
        Ok(ctx)
    }
}

// ---------------------------------------------------------------------------
// Expectations and mutations

const NO_TOKEN: &str = "no token present";

fn pass() -> JsonValue {
    obj([("passed", true.into())])
}

fn fail(step: u8, reason: FailureReason, hop: Option<u64>) -> JsonValue {
    let mut o = obj([
        ("passed", false.into()),
        ("failed_step", JsonValue::from(u32::from(step))),
        ("reason", reason.as_str().into()),
    ]);
    if let Some(seq) = hop {
        o.insert("failing_hop_seq", int(seq));
    }
    o
}

fn no_token() -> JsonValue {
    obj([("detection", NO_TOKEN.into())])
}

fn observed(report: &VerificationReport) -> JsonValue {
    match (report.failed_step, report.reason) {
        (Some(step), Some(reason)) => fail(step, reason, report.failing_hop_seq),
        _ => pass(),
    }
}

fn set(path: &str, value: JsonValue) -> JsonValue {
    obj([("op", "set".into()), ("path", path.into()), ("value", value)])
}

fn remove(path: &str) -> JsonValue {
    obj([("op", "remove".into()), ("path", path.into())])
}

fn insert(path: &str, value: JsonValue) -> JsonValue {
    obj([("op", "insert".into()), ("path", path.into()), ("value", value)])
}

fn raw(text: &str) -> JsonValue {
    obj([("op", "raw".into()), ("value", text.into())])
}

fn mutation(description: &str, ops: Vec<JsonValue>, expected: JsonValue) -> JsonValue {
    obj([
        ("description", description.into()),
        ("ops", JsonValue::Array(ops)),
        ("expected", expected),
    ])
}

fn with_context(mut m: JsonValue, context: JsonValue) -> JsonValue {
    m.insert("context", context);
    m
}

enum Doc {
    Json(JsonValue),
    Raw(String),
    Absent,
}

fn pointer(path: &str) -> Result<Vec<String>, String> {
    if path.is_empty() {
        return Ok(Vec::new());
    }
    let rest = path
        .strip_prefix('/')
        .ok_or_else(|| format!("pointer {path:?} must start with '/'"))?;
    Ok(rest
        .split('/')
        .map(|t| t.replace("~1", "/").replace("~0", "~"))
        .collect())
}

fn array_index(token: &str, len: usize, allow_end: bool) -> Result<usize, String> {
    let i: usize = token
        .parse()
        .map_err(|_| format!("bad array index {token:?}"))?;
    if i < len || (allow_end && i == len) {
        Ok(i)
    } else {
        Err(format!("array index {i} out of range"))
    }
}

fn apply_op(doc: &mut Doc, op: &JsonValue) -> Result<(), String> {
    let kind = str_field(op, "op")?;
    if kind == "raw" {
        *doc = Doc::Raw(str_field(op, "value")?.to_owned());
        return Ok(());
    }
    let tokens = pointer(str_field(op, "path")?)?;
    let value = op.get("value").cloned();
    let Some((last, parents)) = tokens.split_last() else {
        *doc = match kind {
            "set" => Doc::Json(value.ok_or("set needs a value")?),
            "remove" => Doc::Absent,
            _ => return Err(format!("op {kind:?} cannot target the whole document")),
        };
        return Ok(());
    };
    let Doc::Json(root) = doc else {
        return Err("pointer edit on a document that is not JSON".into());
    };
    let mut target = root;
    for t in parents {
        target = match target {
            JsonValue::Object(m) => m.get_mut(t.as_str()),
            JsonValue::Array(a) => {
                let i = array_index(t, a.len(), false)?;
                a.get_mut(i)
            }
            _ => None,
        }
        .ok_or_else(|| format!("pointer segment {t:?} not found"))?;
    }
    match (kind, target) {
        ("set", JsonValue::Object(m)) => {
            m.insert(last.clone(), value.ok_or("set needs a value")?);
        }
        ("set", JsonValue::Array(a)) => {
            let i = array_index(last, a.len(), false)?;
            a[i] = value.ok_or("set needs a value")?;
        }
        ("remove", JsonValue::Object(m)) => {
            m.remove(last.as_str())
                .ok_or_else(|| format!("no member {last:?} to remove"))?;
        }
        ("remove", JsonValue::Array(a)) => {
            let i = array_index(last, a.len(), false)?;
            a.remove(i);
        }
        ("insert", JsonValue::Array(a)) => {
            let i = array_index(last, a.len(), true)?;
            a.insert(i, value.ok_or("insert needs a value")?);
        }
        (kind, t) => return Err(format!("op {kind:?} not applicable to {}", t.type_name())),
    }
    Ok(())
}

fn run_mutation(
    base: &JsonValue,
    ctx: &ContextSpec,
    m: &JsonValue,
) -> Result<(String, JsonValue, JsonValue), String> {
    let description = str_field(m, "description")?.to_owned();
    let expected = field(m, "expected")?.clone();
    let mut ctx = ctx.clone();
    if let Some(over) = m.get("context") {
        ctx.apply(over)?;
    }
    let ctx = ctx.build()?;
    let mut doc = Doc::Json(base.clone());
    for op in array_field(m, "ops")? {
        apply_op(&mut doc, op)?;
    }
    let got = match doc {
        Doc::Absent => no_token(),
        Doc::Json(v) => observed(&verify_token_json(&v, &ctx)),
        Doc::Raw(text) => observed(&verify_token_bytes(text.as_bytes(), &ctx)),
    };
    Ok((description, expected, got))
}

// ---------------------------------------------------------------------------
// Case construction

struct Fixture {
    issuer: KeyPair,
    attacker: KeyPair,
    spare: KeyPair,
}

impl Fixture {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
        let mut key = |kid: &str| {
            let mut seed = [0u8; 32];
            rng.fill(&mut seed);
            KeyPair::from_seed(kid, seed)
        };
        Fixture {
            issuer: key("corpus-issuer-1"),
            attacker: key("corpus-issuer-1"),
            spare: key("corpus-issuer-2"),
        }
    }

    fn context(&self, session: &str) -> ContextSpec {
        ContextSpec::new(vec![self.issuer.public_key()], session, VERIFY_AT)
    }
}

fn token_id(n: u32) -> String {
    format!("00000000-0000-4000-8000-{n:012x}")
}

fn alice() -> Principal {
    Principal {
        display_name: Some("Alice Example".into()),
        ..Principal::new("alice@example.com", IdType::Email)
    }
}

fn default_scope() -> Scope {
    Scope {
        authorized_tools: Some(vec!["calendar.read".into(), "mail.draft".into()]),
        ..Scope::new(
            "Schedule the design review and draft the invitation email",
            Classification::Internal,
        )
    }
}

fn hop_at(i: u64, agent_id: &str, agent_type: &str, summary: &str) -> HopRequest {
    let mut h = HopRequest::new(agent_id, agent_type, summary);
    h.timestamp = Some(CORPUS_CLOCK + 1000 * i);
    h
}

fn standard_hops(n: u64) -> Vec<HopRequest> {
    (1..=n)
        .map(|i| {
            let (id, ty) = match i {
                1 => ("orchestrator".to_owned(), "orchestrator"),
                _ => (format!("sub-agent-{i}"), "sub-agent"),
            };
            let mut h = hop_at(i, &id, ty, &format!("step {i}: handle delegated part {i}"));
            if i % 2 == 0 {
                h.agent_fingerprint = Some(format!("sha256:{:064x}", i * 0x1111));
            }
            h
        })
        .collect()
}

fn spec(f: &Fixture, id: u32, session: &str, hops: Vec<HopRequest>) -> TokenSpec {
    TokenSpec {
        issuer: f.issuer.clone(),
        request: IssueRequest::new(alice(), default_scope(), session)
            .at(CORPUS_CLOCK)
            .with_token_id(token_id(id)),
        hops,
        unchecked: false,
    }
}

fn token_case(
    name: &str,
    description: &str,
    spec: &TokenSpec,
    context: &ContextSpec,
    expected_base: JsonValue,
    mutations: Vec<JsonValue>,
) -> (String, JsonValue) {
    let token = spec.build().expect("golden inputs are valid");
    let canonical = token.to_json().to_canonical_string();
    let doc = obj([
        ("name", name.into()),
        ("kind", "token".into()),
        ("description", description.into()),
        ("inputs", spec.to_json()),
        ("context", context.to_json()),
        ("expected_token", canonical.as_str().into()),
        ("size_bytes", int(canonical.len() as u64)),
        ("expected", expected_base),
        ("mutations", JsonValue::Array(mutations)),
    ]);
    (name.to_owned(), doc)
}

fn hop_json(t: &Token, i: usize) -> JsonValue {
    t.chain[i].to_json()
}

fn cases_plain_tokens(f: &Fixture) -> Vec<(String, JsonValue)> {
    let ctx = f.context(SESSION);
    let mut out = Vec::new();

    let s0 = spec(f, 1, SESSION, vec![]);
    out.push(token_case(
        "token_0_hops",
        "freshly issued token with an empty chain",
        &s0,
        &ctx,
        pass(),
        vec![
            mutation(
                "intent edited after signing",
                vec![set("/scope/intent", "Delete every calendar entry".into())],
                fail(3, FailureReason::RootSignatureInvalid, None),
            ),
            with_context(
                mutation(
                    "verified against a key set without the issuer's kid",
                    vec![],
                    fail(3, FailureReason::UnknownKid, None),
                ),
                obj([(
                    "issuer_keys",
                    JsonValue::Array(vec![f.spare.public_key().to_key_file()]),
                )]),
            ),
        ],
    ));

    let s1 = spec(f, 2, SESSION, standard_hops(1));
    out.push(token_case(
        "token_1_hop",
        "one delegation hop",
        &s1,
        &ctx,
        pass(),
        vec![
            mutation(
                "hop action_summary edited",
                vec![set("/chain/0/action_summary", "wire funds".into())],
                fail(5, FailureReason::HopSignatureInvalid, Some(1)),
            ),
            mutation(
                "only hop removed: a valid 0-hop prefix remains, so this is accepted",
                vec![remove("/chain/0")],
                pass(),
            ),
        ],
    ));

    let s3 = spec(f, 3, SESSION, standard_hops(3));
    let t3 = s3.build().expect("valid");
    out.push(token_case(
        "token_3_hops",
        "three hops, every signed hop field mutated in turn",
        &s3,
        &ctx,
        pass(),
        vec![
            mutation(
                "hop 1 agent_type changed",
                vec![set("/chain/0/agent_type", "tool-executor".into())],
                fail(5, FailureReason::HopSignatureInvalid, Some(1)),
            ),
            mutation(
                "hop 2 fingerprint changed",
                vec![set("/chain/1/agent_fingerprint", "sha256:00".into())],
                fail(5, FailureReason::HopSignatureInvalid, Some(2)),
            ),
            mutation(
                "hop 2 fingerprint removed",
                vec![remove("/chain/1/agent_fingerprint")],
                fail(5, FailureReason::HopSignatureInvalid, Some(2)),
            ),
            mutation(
                "hop 3 timestamp moved by 1 ms",
                vec![set("/chain/2/timestamp", int(CORPUS_CLOCK + 3001))],
                fail(5, FailureReason::HopSignatureInvalid, Some(3)),
            ),
            mutation(
                "hop 3 signature replaced by hop 2's",
                vec![set(
                    "/chain/2/hop_signature",
                    t3.chain[1].hop_signature.as_deref().unwrap_or("").into(),
                )],
                fail(5, FailureReason::HopSignatureInvalid, Some(3)),
            ),
            mutation(
                "root signature value edited: every hop still signs the original value",
                vec![set(
                    "/signature/value",
                    f.issuer.sign(b"something else").to_b64url().into(),
                )],
                fail(3, FailureReason::RootSignatureInvalid, None),
            ),
        ],
    ));

    // Representative field lengths for size measurement.
    let intent = "Prepare the quarterly board summary: collect the revenue, churn and \
                  headcount figures from the finance workspace, reconcile them against \
                  last quarter's filing, and draft a two-page memo for review."
        .to_owned();
    let mut s10 = spec(f, 4, SESSION, vec![]);
    s10.request.scope = Scope {
        authorized_tools: Some(vec![
            "finance.read".into(),
            "docs.write".into(),
            "mail.draft".into(),
        ]),
        authorized_resources: Some(vec!["workspace://finance/q3".into()]),
        max_hops: Some(12),
        ..Scope::new(intent, Classification::Confidential)
    };
    s10.hops = (1..=10u64)
        .map(|i| {
            let mut h = hop_at(
                i,
                &format!("agent-{i:02}"),
                if i == 1 { "orchestrator" } else { "sub-agent" },
                &format!(
                    "Hop {i:02}: retrieve the assigned section, check the figures against \
                     the source ledger and hand the result onward."
                ),
            );
            h.agent_fingerprint = Some(format!("sha256:{:064x}", i * 0xabcdef));
            h
        })
        .collect();
    let mut ten = token_case(
        "token_10_hops",
        "ten hops with representative field lengths; size recorded",
        &s10,
        &ctx,
        pass(),
        vec![mutation(
            "hop 7 timestamp edited",
            vec![set("/chain/6/timestamp", int(CORPUS_CLOCK))],
            fail(5, FailureReason::HopSignatureInvalid, Some(7)),
        )],
    );
    ten.1.insert(
        "size_bounds",
        JsonValue::Array(vec![
            int(TEN_HOP_SIZE_BOUNDS.0 as u64),
            int(TEN_HOP_SIZE_BOUNDS.1 as u64),
        ]),
    );
    out.push(ten);
    out
}

fn forged_token(base: &Token, key: &KeyPair) -> Token {
    let mut req = IssueRequest::new(
        Principal::new("ceo@example.com", IdType::Email),
        Scope {
            network_egress: true,
            ..Scope::new(
                "Approve the outgoing payment batch",
                Classification::Restricted,
            )
        },
        base.header.session_id.clone(),
    )
    .at(base.header.issued_at)
    .with_token_id(token_id(99));
    req.ttl_ms = None;
    issue(&req, key).expect("valid forgery request")
}

fn cases_scenarios(f: &Fixture) -> Vec<(String, JsonValue)> {
    let ctx = f.context(SESSION);
    let mut out = Vec::new();

    let s1 = spec(f, 10, SESSION, standard_hops(3));
    out.push(token_case(
        "scenario_s1_no_token",
        "the token is dropped before the next agent",
        &s1,
        &ctx,
        pass(),
        vec![mutation(
            "token absent from the request",
            vec![remove("")],
            no_token(),
        )],
    ));

    let s2 = spec(f, 11, SESSION, standard_hops(2));
    let t2 = s2.build().expect("valid");
    let under_issuer_kid = forged_token(&t2, &f.attacker);
    let own_kid = forged_token(&t2, &KeyPair::from_seed("attacker-1", f.attacker.seed()));
    let payload = crate::lifecycle::root_signing_payload(&{
        let mut t = t2.clone();
        t.chain.clear();
        t
    })
    .expect("empty chain");
    let root_fail = || fail(3, FailureReason::RootSignatureInvalid, None);
    out.push(token_case(
        "scenario_s2_forgery",
        "forged principal or scope; all caught by the root signature",
        &s2,
        &ctx,
        pass(),
        vec![
            mutation(
                "new token signed by an attacker key claiming the issuer kid",
                vec![set("", under_issuer_kid.to_json())],
                root_fail(),
            ),
            mutation(
                "new token signed by an attacker key under its own kid",
                vec![set("", own_kid.to_json())],
                fail(3, FailureReason::UnknownKid, None),
            ),
            mutation(
                "principal id swapped",
                vec![set("/principal/id", "ceo@example.com".into())],
                root_fail(),
            ),
            mutation(
                "principal display_name removed",
                vec![remove("/principal/display_name")],
                root_fail(),
            ),
            mutation(
                "classification raised",
                vec![set("/scope/data_classification", "restricted".into())],
                root_fail(),
            ),
            mutation(
                "network egress granted",
                vec![set("/scope/network_egress", true.into())],
                root_fail(),
            ),
            mutation(
                "tool list widened",
                vec![insert("/scope/authorized_tools/2", "payments.send".into())],
                root_fail(),
            ),
            mutation(
                "expiry pushed out a day",
                vec![set(
                    "/header/expires_at",
                    int(t2.header.expires_at + 86_400_000),
                )],
                root_fail(),
            ),
            mutation(
                "root signature recomputed with an attacker key",
                vec![set(
                    "/signature/value",
                    f.attacker.sign(&payload).to_b64url().into(),
                )],
                root_fail(),
            ),
            mutation(
                "signature alg relabelled",
                vec![set("/signature/alg", "EdDSA".into())],
                root_fail(),
            ),
        ],
    ));

    let s3 = spec(f, 12, SESSION, standard_hops(4));
    let t3 = s3.build().expect("valid");
    let fabricated = {
        let hop = Hop {
            seq: 5,
            agent_id: "shadow-agent".into(),
            agent_type: "tool-executor".into(),
            agent_fingerprint: None,
            timestamp: CORPUS_CLOCK + 5000,
            action_summary: "approve payment batch".into(),
            parent: 4,
            hop_signature: None,
        };
        append_hop_unchecked(&t3, hop, &f.attacker).expect("signed chain").chain[4].to_json()
    };
    let mut renumbered_3 = hop_json(&t3, 2);
    renumbered_3.insert("seq", int(2));
    renumbered_3.insert("parent", int(1));
    let mut renumbered_4 = hop_json(&t3, 3);
    renumbered_4.insert("seq", int(3));
    renumbered_4.insert("parent", int(2));
    let hop5 = |i| fail(5, FailureReason::HopSignatureInvalid, Some(i));
    let seq4 = || fail(4, FailureReason::ChainSequenceViolation, None);
    out.push(token_case(
        "scenario_s3_chain_tampering",
        "hops modified, removed, reordered or fabricated",
        &s3,
        &ctx,
        pass(),
        vec![
            mutation(
                "hop 2 action_summary rewritten",
                vec![set("/chain/1/action_summary", "export the customer table".into())],
                hop5(2),
            ),
            mutation(
                "hop 3 agent_id rewritten",
                vec![set("/chain/2/agent_id", "impostor".into())],
                hop5(3),
            ),
            mutation(
                "hop 1 timestamp rewritten",
                vec![set("/chain/0/timestamp", int(CORPUS_CLOCK + 999))],
                hop5(1),
            ),
            mutation(
                "hop 3 parent pointed at the root (still well formed)",
                vec![set("/chain/2/parent", int(0))],
                hop5(3),
            ),
            mutation(
                "hop 4 signature replaced by hop 3's",
                vec![set(
                    "/chain/3/hop_signature",
                    t3.chain[2].hop_signature.as_deref().unwrap_or("").into(),
                )],
                hop5(4),
            ),
            mutation(
                "hop 2 signature is not base64url",
                vec![set("/chain/1/hop_signature", "!!not-base64!!".into())],
                hop5(2),
            ),
            mutation("hop 2 removed, leaving a gap", vec![remove("/chain/1")], seq4()),
            mutation(
                "hop 2 removed and later hops renumbered",
                vec![
                    remove("/chain/1"),
                    set("/chain/1", renumbered_3),
                    set("/chain/2", renumbered_4),
                ],
                hop5(2),
            ),
            mutation(
                "hops 2 and 3 swapped",
                vec![
                    set("/chain/1", hop_json(&t3, 2)),
                    set("/chain/2", hop_json(&t3, 1)),
                ],
                seq4(),
            ),
            mutation(
                "hop 3 duplicated",
                vec![insert("/chain/3", hop_json(&t3, 2))],
                seq4(),
            ),
            mutation(
                "hop 2 parent set to itself",
                vec![set("/chain/1/parent", int(2))],
                seq4(),
            ),
            mutation(
                "fabricated hop 5 signed with an attacker key",
                vec![insert("/chain/4", fabricated)],
                hop5(5),
            ),
        ],
    ));

    let s4 = spec(f, 13, PRIOR_SESSION, standard_hops(2));
    out.push(token_case(
        "scenario_s4_replay",
        "valid token from a prior session presented in the current one",
        &s4,
        &ctx,
        fail(7, FailureReason::SessionMismatch, None),
        vec![
            with_context(
                mutation("verified in its own session", vec![], pass()),
                obj([("session_id", PRIOR_SESSION.into())]),
            ),
            mutation(
                "session_id rewritten to the current session",
                vec![set("/header/session_id", SESSION.into())],
                fail(3, FailureReason::RootSignatureInvalid, None),
            ),
        ],
    ));
    out
}

fn cases_checks(f: &Fixture) -> Vec<(String, JsonValue)> {
    let ctx = f.context(SESSION);
    let mut out = Vec::new();

    let sv = spec(f, 20, SESSION, standard_hops(1));
    out.push(token_case(
        "check_version",
        "protocol version gate",
        &sv,
        &ctx,
        pass(),
        vec![
            mutation(
                "hdp field claims 0.2",
                vec![set("/hdp", "0.2".into())],
                fail(1, FailureReason::UnsupportedVersion, None),
            ),
            mutation(
                "header.version disagrees with hdp",
                vec![set("/header/version", "0.0".into())],
                fail(1, FailureReason::UnsupportedVersion, None),
            ),
        ],
    ));

    let mut se = spec(f, 21, SESSION, standard_hops(1));
    se.request.ttl_ms = Some(3_600_000);
    let expires = CORPUS_CLOCK + 3_600_000;
    let at = |now: u64| obj([("now", int(now))]);
    out.push(token_case(
        "check_expiry",
        "expiry boundary, clock skew and future issuance",
        &se,
        &ctx,
        pass(),
        vec![
            with_context(
                mutation("one millisecond before expiry", vec![], pass()),
                at(expires - 1),
            ),
            with_context(
                mutation(
                    "exactly at expiry",
                    vec![],
                    fail(2, FailureReason::Expired, None),
                ),
                at(expires),
            ),
            with_context(
                mutation("inside a 5 s skew allowance", vec![], pass()),
                obj([("now", int(expires + 4999)), ("clock_skew_ms", int(5000))]),
            ),
            with_context(
                mutation(
                    "at the end of a 5 s skew allowance",
                    vec![],
                    fail(2, FailureReason::Expired, None),
                ),
                obj([("now", int(expires + 5000)), ("clock_skew_ms", int(5000))]),
            ),
            with_context(
                mutation("issued in the future, default policy", vec![], pass()),
                at(CORPUS_CLOCK - 1),
            ),
            with_context(
                mutation(
                    "issued in the future, strict policy",
                    vec![],
                    fail(2, FailureReason::IssuedInFuture, None),
                ),
                obj([
                    ("now", int(CORPUS_CLOCK - 1)),
                    ("reject_future_issued", true.into()),
                ]),
            ),
        ],
    ));

    let mut sm = spec(f, 22, SESSION, standard_hops(3));
    sm.request.scope.max_hops = Some(2);
    sm.unchecked = true;
    out.push(token_case(
        "check_max_hops",
        "three hops appended past a budget of two",
        &sm,
        &ctx,
        fail(6, FailureReason::MaxHopsExceeded, None),
        vec![mutation(
            "last hop dropped, back within budget",
            vec![remove("/chain/2")],
            pass(),
        )],
    ));

    let sf = spec(f, 23, SESSION, standard_hops(1));
    let audit = strip_for_audit(&sf.build().expect("valid")).to_json();
    let malformed = || fail(1, FailureReason::Malformed, None);
    out.push(token_case(
        "check_malformed",
        "inputs that do not decode to a token",
        &sf,
        &ctx,
        pass(),
        vec![
            mutation("empty document", vec![raw("")], malformed()),
            mutation("truncated JSON", vec![raw("{\"hdp\":\"0.1\",")], malformed()),
            mutation(
                "duplicate member",
                vec![raw("{\"hdp\":\"0.1\",\"hdp\":\"0.1\"}")],
                malformed(),
            ),
            mutation("principal missing", vec![remove("/principal")], malformed()),
            mutation("audit-only record presented", vec![set("", audit)], malformed()),
            mutation(
                "seq encoded as a string",
                vec![set("/chain/0/seq", "1".into())],
                malformed(),
            ),
            mutation(
                "fractional issued_at",
                vec![set(
                    "/header/issued_at",
                    JsonValue::number(1.5).expect("finite"),
                )],
                malformed(),
            ),
            mutation(
                "unknown top-level member",
                vec![set("/extensions", JsonValue::object())],
                malformed(),
            ),
        ],
    ));
    out
}

fn lineage_case(
    name: &str,
    description: &str,
    members: &[TokenSpec],
    built: &[Token],
    context: &ContextSpec,
    expected: JsonValue,
) -> (String, JsonValue) {
    for (s, t) in members.iter().zip(built) {
        debug_assert_eq!(s.build().expect("valid").canonical_bytes(), t.canonical_bytes());
    }
    let doc = obj([
        ("name", name.into()),
        ("kind", "lineage".into()),
        ("description", description.into()),
        (
            "members",
            JsonValue::Array(members.iter().map(TokenSpec::to_json).collect()),
        ),
        (
            "expected_tokens",
            JsonValue::Array(
                built
                    .iter()
                    .map(|t| t.to_json().to_canonical_string().into())
                    .collect(),
            ),
        ),
        ("context", context.to_json()),
        ("expected", expected),
    ]);
    (name.to_owned(), doc)
}

fn lineage_fail(kind: &str, index: u64) -> JsonValue {
    obj([
        ("passed", false.into()),
        ("failure", kind.into()),
        ("index", int(index)),
    ])
}

fn cases_lineage(f: &Fixture) -> Vec<(String, JsonValue)> {
    let ctx = f.context(SESSION);
    let first = spec(f, 30, SESSION, standard_hops(2));
    let t_first = first.build().expect("valid");
    let mut out = Vec::new();

    let successor = |id: u32, principal: Principal, session: &str| {
        let mut s = spec(f, id, session, vec![hop_at(40, "orchestrator", "orchestrator", "resume")]);
        s.request.principal = principal;
        s.request = s.request.at(CORPUS_CLOCK + 30_000);
        s.request.scope.intent = "Continue the scheduling task with the extended deadline".into();
        s.request.parent_token_id = Some(t_first.header.token_id.clone());
        s
    };
    let reissue = |s: &TokenSpec| {
        let mut req = s.request.clone();
        req.parent_token_id = None;
        let t = reauthorize(&t_first, &req, &f.issuer).expect("valid reauthorization");
        s.hops.iter().fold(t, |t, h| {
            extend(&t, h, &f.issuer, h.timestamp.expect("timestamped")).expect("valid hop")
        })
    };

    let reauth = successor(31, alice(), SESSION);
    out.push(lineage_case(
        "lineage_reauth_pair",
        "the same principal re-authorizes mid-session",
        &[first.clone(), reauth.clone()],
        &[t_first.clone(), reissue(&reauth)],
        &ctx,
        pass(),
    ));

    let bob = Principal::new("bob@example.com", IdType::Email);
    let handoff = successor(32, bob, SESSION);
    out.push(lineage_case(
        "lineage_multi_principal",
        "a second principal authorizes the next stage of the same session",
        &[first.clone(), handoff.clone()],
        &[t_first.clone(), reissue(&handoff)],
        &ctx,
        pass(),
    ));

    let mut broken = successor(33, alice(), SESSION);
    broken.request.parent_token_id = Some(token_id(77));
    out.push(lineage_case(
        "lineage_broken_parent",
        "successor names a parent that is not its predecessor",
        &[first.clone(), broken.clone()],
        &[t_first.clone(), broken.build().expect("valid")],
        &ctx,
        lineage_fail("LinkageBroken", 1),
    ));

    let diverged = successor(34, alice(), PRIOR_SESSION);
    out.push(lineage_case(
        "lineage_session_divergence",
        "successor is bound to a different session",
        &[first.clone(), diverged.clone()],
        &[t_first.clone(), reissue(&diverged)],
        &ctx,
        lineage_fail("SessionMismatch", 1),
    ));
    out
}

/// RFC 8032 section 7.1 vectors, as `(name, secret, public, message, signature)` hex.
pub fn rfc8032_vectors() -> Vec<[String; 5]> {
    RFC8032_VECTORS
        .split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(|block| {
            let mut out: [String; 5] = Default::default();
            for line in block.lines() {
                let (k, v) = line.split_once(' ').expect("key value line");
                let i = ["name", "secret", "public", "message", "signature"]
                    .iter()
                    .position(|n| *n == k)
                    .expect("known field");
                out[i] = v.to_owned();
            }
            out
        })
        .collect()
}

/// RFC 8785 Appendix B number table as `(ieee754 bits, expected text)`.
pub fn rfc8785_numbers() -> Vec<(u64, String)> {
    RFC8785_NUMBERS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (bits, text) = l.split_once(' ').expect("bits text");
            (
                u64::from_str_radix(bits, 16).expect("hex bits"),
                text.to_owned(),
            )
        })
        .collect()
}

/// RFC 8785 sample documents as `(name, input, canonical output)`.
pub fn rfc8785_documents() -> [(&'static str, &'static str, &'static str); 2] {
    [
        ("primitives", RFC8785_SAMPLE_IN, RFC8785_SAMPLE_OUT),
        ("property_sorting", RFC8785_SORT_IN, RFC8785_SORT_OUT),
    ]
}

fn cases_vectors(f: &Fixture) -> Vec<(String, JsonValue)> {
    let ed = obj([
        ("name", "rfc8032_vectors".into()),
        ("kind", "rfc8032".into()),
        ("description", "Ed25519 test vectors from RFC 8032 section 7.1".into()),
        (
            "vectors",
            JsonValue::Array(
                rfc8032_vectors()
                    .into_iter()
                    .map(|[name, secret, public, message, signature]| {
                        obj([
                            ("name", name.into()),
                            ("secret", secret.into()),
                            ("public", public.into()),
                            ("message", message.into()),
                            ("signature", signature.into()),
                        ])
                    })
                    .collect(),
            ),
        ),
    ]);

    let keys = [f.issuer.clone(), f.spare.clone()];
    let doc = render_wellknown(&keys.iter().map(KeyPair::public_key).collect::<Vec<_>>());
    let wk = obj([
        ("name", "wellknown_keys".into()),
        ("kind", "wellknown".into()),
        ("description", "issuer key document for two keys".into()),
        (
            "keys",
            JsonValue::Array(
                keys.iter()
                    .map(|k| {
                        obj([
                            ("kid", k.kid().into()),
                            ("seed", hex::encode(k.seed()).into()),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("expected_document", doc.to_canonical_string().into()),
    ]);

    let jcs = obj([
        ("name", "rfc8785_canonicalization".into()),
        ("kind", "jcs".into()),
        ("description", "RFC 8785 sample documents and number table".into()),
        (
            "documents",
            JsonValue::Array(
                rfc8785_documents()
                    .into_iter()
                    .map(|(name, input, output)| {
                        obj([
                            ("name", name.into()),
                            ("input", input.into()),
                            ("expected", output.into()),
                        ])
                    })
                    .collect(),
            ),
        ),
        (
            "numbers",
            JsonValue::Array(
                rfc8785_numbers()
                    .into_iter()
                    .map(|(bits, text)| {
                        obj([
                            ("ieee754", format!("{bits:016x}").into()),
                            ("expected", text.into()),
                        ])
                    })
                    .collect(),
            ),
        ),
    ]);
    vec![
        ("rfc8032_vectors".into(), ed),
        ("wellknown_keys".into(), wk),
        ("rfc8785_canonicalization".into(), jcs),
    ]
}

/// All golden cases as `(name, document)`, in a fixed order.
pub fn build_cases() -> Vec<(String, JsonValue)> {
    let f = Fixture::new();
    let mut cases = cases_plain_tokens(&f);
    cases.extend(cases_scenarios(&f));
    cases.extend(cases_checks(&f));
    cases.extend(cases_lineage(&f));
    cases.extend(cases_vectors(&f));
    cases
}

/// Write every case to `<out_dir>/<name>.json`.
pub fn generate_corpus(out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, CorpusError> {
    let dir = out_dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for (name, doc) in build_cases() {
        let path = dir.join(format!("{name}.json"));
        let mut text = doc.to_pretty_string();
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

fn run_token_case(doc: &JsonValue, c: &mut Checker) -> Result<(), String> {
    let spec = TokenSpec::from_json(field(doc, "inputs")?)?;
    let ctx = ContextSpec::from_json(field(doc, "context")?)?;
    let expected_text = str_field(doc, "expected_token")?;

    match spec.build() {
        Ok(t) => {
            let regenerated = t.to_json().to_canonical_string();
            c.check(regenerated == expected_text, || {
                "regenerating from inputs does not reproduce expected_token".into()
            });
        }
        Err(e) => c.fail(format!("inputs do not build a token: {e}")),
    }
    if let Some(n) = opt_u64(doc, "size_bytes")? {
        c.check(n == expected_text.len() as u64, || {
            format!("size_bytes {n} but expected_token is {} bytes", expected_text.len())
        });
    }
    if let Some(bounds) = doc.get("size_bounds").and_then(JsonValue::as_array) {
        let lo = bounds.first().and_then(JsonValue::as_u64).unwrap_or(0);
        let hi = bounds.get(1).and_then(JsonValue::as_u64).unwrap_or(u64::MAX);
        let n = expected_text.len() as u64;
        c.check(lo <= n && n <= hi, || format!("size {n} outside [{lo}, {hi}]"));
    }

    let base = json::parse_str(expected_text).map_err(|e| format!("expected_token: {e}"))?;
    c.check(base.to_canonical_string() == expected_text, || {
        "expected_token is not in canonical form".into()
    });
    let got = observed(&verify_token_json(&base, &ctx.build()?));
    let want = field(doc, "expected")?;
    c.check(&got == want, || {
        format!("base token: expected {want}, got {got}")
    });

    for m in array_field(doc, "mutations")? {
        match run_mutation(&base, &ctx, m) {
            Ok((desc, want, got)) => c.check(got == want, || {
                format!("mutation {desc:?}: expected {want}, got {got}")
            }),
            Err(e) => c.fail(format!("mutation could not be applied: {e}")),
        }
    }
    Ok(())
}

fn run_lineage_case(doc: &JsonValue, c: &mut Checker) -> Result<(), String> {
    let ctx = ContextSpec::from_json(field(doc, "context")?)?.build()?;
    let members = array_field(doc, "members")?;
    let expected = array_field(doc, "expected_tokens")?;
    c.check(members.len() == expected.len(), || {
        "members and expected_tokens differ in length".into()
    });
    let mut tokens = Vec::new();
    for (i, (m, e)) in members.iter().zip(expected).enumerate() {
        let text = e.as_str().ok_or("expected_tokens entries must be strings")?;
        match TokenSpec::from_json(m).and_then(|s| s.build()) {
            Ok(t) => c.check(t.to_json().to_canonical_string() == text, || {
                format!("member {i} does not regenerate to its expected token")
            }),
            Err(e) => c.fail(format!("member {i}: {e}")),
        }
        let v = json::parse_str(text).map_err(|e| format!("expected token {i}: {e}"))?;
        tokens.push(Token::from_json(&v).map_err(|e| format!("expected token {i}: {e}"))?);
    }
    let report = verify_lineage(&tokens, &ctx);
    let got = match &report.failure {
        None => pass(),
        Some(f) => {
            let mut o = obj([("passed", false.into()), ("failure", f.kind().into())]);
            if let Some(i) = f.index() {
                o.insert("index", int(i as u64));
            }
            o
        }
    };
    let want = field(doc, "expected")?;
    c.check(&got == want, || format!("lineage: expected {want}, got {got}"));
    Ok(())
}

fn run_rfc8032_case(doc: &JsonValue, c: &mut Checker) -> Result<(), String> {
    for v in array_field(doc, "vectors")? {
        let name = str_field(v, "name")?;
        let seed: [u8; 32] = hex_decode(str_field(v, "secret")?)?
            .try_into()
            .map_err(|_| format!("{name}: secret must be 32 bytes"))?;
        let public = hex_decode(str_field(v, "public")?)?;
        let message = hex_decode(str_field(v, "message")?)?;
        let signature = hex_decode(str_field(v, "signature")?)?;
        let key = KeyPair::from_seed("vector", seed);
        c.check(key.public_key_bytes().as_slice() == public.as_slice(), || {
            format!("{name}: public key mismatch")
        });
        let sig = key.sign(&message);
        c.check(sig.0.as_slice() == signature.as_slice(), || {
            format!("{name}: signature mismatch")
        });
        let pk = PublicKey::from_bytes("vector", &public).map_err(|e| format!("{name}: {e}"))?;
        let given = Signature64::from_bytes(&signature).map_err(|e| format!("{name}: {e}"))?;
        c.check(pk.verify(&message, &given), || format!("{name}: does not verify"));
        let mut altered = message.clone();
        match altered.first_mut() {
            Some(b) => *b ^= 0x01,
            None => altered.push(0),
        }
        c.check(!pk.verify(&altered, &given), || {
            format!("{name}: verifies for an altered message")
        });
    }
    Ok(())
}

fn run_wellknown_case(doc: &JsonValue, c: &mut Checker) -> Result<(), String> {
    let mut keys = Vec::new();
    for k in array_field(doc, "keys")? {
        let seed: [u8; 32] = hex_decode(str_field(k, "seed")?)?
            .try_into()
            .map_err(|_| "seed must be 32 bytes".to_owned())?;
        keys.push(KeyPair::from_seed(str_field(k, "kid")?, seed).public_key());
    }
    let expected = str_field(doc, "expected_document")?;
    c.check(render_wellknown(&keys).to_canonical_string() == expected, || {
        "rendered key document differs".into()
    });
    let parsed = json::parse_str(expected)
        .map_err(|e| e.to_string())
        .and_then(|v| parse_wellknown(&v).map_err(|e| e.to_string()))?;
    c.check(parsed == keys, || "parsed key document differs".into());
    Ok(())
}

fn run_jcs_case(doc: &JsonValue, c: &mut Checker) -> Result<(), String> {
    for d in array_field(doc, "documents")? {
        let name = str_field(d, "name")?;
        match json::parse_str(str_field(d, "input")?) {
            Ok(v) => {
                let got = v.to_canonical_string();
                let want = str_field(d, "expected")?;
                c.check(got == want, || format!("{name}: got {got}"));
            }
            Err(e) => c.fail(format!("{name}: {e}")),
        }
    }
    for n in array_field(doc, "numbers")? {
        let bits = u64::from_str_radix(str_field(n, "ieee754")?, 16)
            .map_err(|e| format!("bad ieee754 bits: {e}"))?;
        let want = str_field(n, "expected")?;
        match JsonValue::number(f64::from_bits(bits)) {
            Ok(v) => {
                let got = v.to_canonical_string();
                c.check(got == want, || format!("{bits:016x}: got {got}, want {want}"));
            }
            Err(_) => c.fail(format!("{bits:016x} is not a finite number")),
        }
    }
    Ok(())
}

/// Run one case document.
pub fn run_case(name: &str, doc: &JsonValue) -> CaseResult {
    let mut c = Checker::new();
    let outcome = match doc.get("kind").and_then(JsonValue::as_str) {
        Some("token") => run_token_case(doc, &mut c),
        Some("lineage") => run_lineage_case(doc, &mut c),
        Some("rfc8032") => run_rfc8032_case(doc, &mut c),
        Some("wellknown") => run_wellknown_case(doc, &mut c),
        Some("jcs") => run_jcs_case(doc, &mut c),
        Some(other) => Err(format!("unknown case kind {other:?}")),
        None => Err("case has no kind".into()),
    };
    if let Err(e) = outcome {
        c.fail(e);
    }
    CaseResult {
        name: name.to_owned(),
        passed: c.failures.is_empty(),
        checks: c.checks,
        failures: c.failures,
    }
}

/// Run every `*.json` case in `dir`, sorted by file name.
pub fn run_corpus(dir: impl AsRef<Path>) -> Result<Vec<CaseResult>, CorpusError> {
    let dir = dir.as_ref();
    let io_err = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err)?;
    paths.retain(|p| p.extension().and_then(|e| e.to_str()) == Some("json"));
    paths.sort();
    if paths.is_empty() {
        return Err(CorpusError::Empty(dir.to_path_buf()));
    }
    Ok(paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            match fs::read(p).map_err(|e| e.to_string()).and_then(|b| {
                json::parse(&b).map_err(|e| e.to_string())
            }) {
                Ok(doc) => run_case(&name, &doc),
                Err(e) => CaseResult {
                    name,
                    passed: false,
                    checks: 1,
                    failures: vec![format!("unreadable case file: {e}")],
                },
            }
        })
        .collect())
}

/// Every failure reason named by some mutation or base expectation.
pub fn reasons_covered(cases: &[(String, JsonValue)]) -> Vec<FailureReason> {
    fn walk(v: &JsonValue, out: &mut Vec<FailureReason>) {
        match v {
            JsonValue::Object(m) => {
                if let Some(r) = m.get("reason").and_then(JsonValue::as_str) {
                    if let Some(r) = FailureReason::parse(r) {
                        if !out.contains(&r) {
                            out.push(r);
                        }
                    }
                }
                m.values().for_each(|v| walk(v, out));
            }
            JsonValue::Array(a) => a.iter().for_each(|v| walk(v, out)),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (_, doc) in cases {
        walk(doc, &mut out);
    }
    out.sort();
    out
}
