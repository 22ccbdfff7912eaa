//! Simulated orchestrator → sub-agent → tool pipelines with misbehaving
//! participants.
//!
//! Every honest agent verifies the token it receives, appends its hop and
//! forwards the result; a terminal executor verifies once more before it
//! "executes" (which only appends a transcript event). Misbehaving agents act
//! as in-transit attackers: they can read and rewrite tokens but do not hold
//! the issuer key. All randomness flows from an explicit seed, so transcripts
//! are reproducible byte for byte.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

use crate::crypto::KeyPair;
use crate::json::JsonValue;
use crate::lifecycle::{extend, issue, HopRequest, IssueRequest, LifecycleError};
use crate::token::{Classification, Hop, IdType, Principal, Scope, Token};
use crate::verify::{verify_token, FailureReason, SessionContext, VerificationReport};

/// Milliseconds between pipeline events.
const STEP_MS: u64 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeryKind {
    /// New token signed with an attacker key but claiming the issuer's kid.
    AttackerKeyIssuerKid,
    /// New token signed with an attacker key under the attacker's own kid.
    AttackerKeyOwnKid,
    /// Genuine token with the principal swapped, original signature kept.
    PrincipalSwap,
    /// Genuine token with a widened scope, original signature kept.
    ScopeEscalation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopField {
    ActionSummary,
    AgentId,
    AgentType,
    Timestamp,
    Fingerprint,
    Signature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TamperKind {
    /// Rewrite one field of hop `seq`.
    ModifyField { seq: u64, field: HopField },
    /// Delete hop `seq`, which is not the last, leaving a gap.
    RemoveHop { seq: u64 },
    /// Delete hop `seq` and renumber the following hops to close the gap.
    RemoveAndRenumber { seq: u64 },
    /// Swap hops `seq` and `seq + 1`.
    SwapAdjacent { seq: u64 },
    /// Append a hop signed with the attacker's key.
    AppendFabricated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    DropsToken,
    ForgesToken(ForgeryKind),
    TampersHop(TamperKind),
    ReplaysPriorSession,
    /// Verifies and extends like an honest agent, but its action summary does
    /// not describe what it actually does.
    MisreportsAction(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedAgent {
    pub agent_id: String,
    pub agent_type: String,
    pub behavior: Behavior,
    pub action_summary: String,
}

impl SimulatedAgent {
    pub fn honest(agent_id: impl Into<String>, agent_type: impl Into<String>) -> Self {
        let agent_id = agent_id.into();
        SimulatedAgent {
            action_summary: format!("{agent_id} handles its delegated subtask"),
            agent_id,
            agent_type: agent_type.into(),
            behavior: Behavior::Honest,
        }
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Issued,
    Verified,
    Rejected,
    Extended,
    DroppedToken,
    ForgedToken,
    TamperedChain,
    ReplayedToken,
    NoTokenPresent,
    Executed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Issued => "issued",
            EventKind::Verified => "verified",
            EventKind::Rejected => "rejected",
            EventKind::Extended => "extended",
            EventKind::DroppedToken => "dropped_token",
            EventKind::ForgedToken => "forged_token",
            EventKind::TamperedChain => "tampered_chain",
            EventKind::ReplayedToken => "replayed_token",
            EventKind::NoTokenPresent => "no_token_present",
            EventKind::Executed => "executed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineEvent {
    pub actor: String,
    pub kind: EventKind,
    pub clock: u64,
    pub detail: String,
    /// Canonical JSON of the token this event produced or inspected.
    pub token: Option<String>,
}

impl PipelineEvent {
    pub fn to_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("actor", self.actor.as_str().into());
        o.insert("event", self.kind.as_str().into());
        o.insert("clock", JsonValue::integer(self.clock).expect("clock below 2^53"));
        o.insert("detail", self.detail.as_str().into());
        if let Some(t) = &self.token {
            o.insert("token", t.as_str().into());
        }
        o
    }
}

/// How the pipeline ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    /// Someone received no token at all.
    NoToken { at: String },
    /// Verification failed at `at`.
    Rejected { at: String, report: VerificationReport },
    /// The terminal executor verified the full chain and acted.
    Executed { report: VerificationReport },
}

impl Terminal {
    pub fn report(&self) -> Option<&VerificationReport> {
        match self {
            Terminal::NoToken { .. } => None,
            Terminal::Rejected { report, .. } | Terminal::Executed { report } => Some(report),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub transcript: Vec<PipelineEvent>,
    pub terminal: Terminal,
    pub final_token: Option<Token>,
}

/// Everything the issuer side of a pipeline needs.
#[derive(Debug, Clone)]
pub struct PipelineSetup {
    pub issuer: KeyPair,
    pub session_id: String,
    pub clock: u64,
    pub principal: Principal,
    pub scope: Scope,
    pub token_id: String,
    /// Seed for the attacker's own signing key.
    pub attacker_seed: [u8; 32],
}

impl PipelineSetup {
    pub fn new(issuer: KeyPair, session_id: impl Into<String>, clock: u64) -> Self {
        PipelineSetup {
            issuer,
            session_id: session_id.into(),
            clock,
            principal: Principal::new("alice@example.com", IdType::Email),
            scope: Scope::new(
                "Prepare the quarterly board summary from the finance workspace",
                Classification::Confidential,
            ),
            token_id: "5a0c5d52-8f3e-4b7a-9d1c-2e6f7a8b9c0d".into(),
            attacker_seed: [0xa5; 32],
        }
    }

    fn attacker_key(&self, kid: &str) -> KeyPair {
        KeyPair::from_seed(kid, self.attacker_seed)
    }

    fn context(&self, now: u64) -> SessionContext {
        SessionContext::new([self.issuer.public_key()], self.session_id.clone(), now)
            .expect("one issuer key")
    }

    /// A valid token from an earlier session, as captured by an eavesdropper.
    fn prior_session_token(&self) -> Result<Token, LifecycleError> {
        let issued_at = self.clock.saturating_sub(3_600_000);
        let mut id = Uuid::parse_str(&self.token_id)
            .map(|u| *u.as_bytes())
            .unwrap_or([0x42; 16]);
        id[0] ^= 0xff;
        let token_id = uuid::Builder::from_random_bytes(id).into_uuid().to_string();
        let t = issue(
            &IssueRequest::new(
                self.principal.clone(),
                self.scope.clone(),
                format!("{}-previous", self.session_id),
            )
            .at(issued_at)
            .with_token_id(token_id),
            &self.issuer,
        )?;
        extend(
            &t,
            &HopRequest::new("orchestrator-prev", "orchestrator", "earlier session work"),
            &self.issuer,
            issued_at + STEP_MS,
        )
    }
}

fn canonical(t: &Token) -> Option<String> {
    Some(t.to_json().to_canonical_string())
}

fn hop_request(agent: &SimulatedAgent, summary: &str, now: u64) -> HopRequest {
    let mut req = HopRequest::new(agent.agent_id.clone(), agent.agent_type.clone(), summary);
    req.timestamp = Some(now);
    req
}

fn forge(setup: &PipelineSetup, genuine: &Token, kind: ForgeryKind) -> Token {
    match kind {
        ForgeryKind::AttackerKeyIssuerKid | ForgeryKind::AttackerKeyOwnKid => {
            let kid = if kind == ForgeryKind::AttackerKeyIssuerKid {
                setup.issuer.kid().to_owned()
            } else {
                "attacker-key".to_owned()
            };
            let attacker = setup.attacker_key(&kid);
            let mut req = IssueRequest::new(
                Principal::new("ceo@example.com", IdType::Email),
                Scope {
                    network_egress: true,
                    persistence: true,
                    ..Scope::new(
                        "Transfer the reserve account balance to the listed vendor",
                        Classification::Restricted,
                    )
                },
                genuine.header.session_id.clone(),
            )
            .at(genuine.header.issued_at)
            .with_token_id(genuine.header.token_id.clone());
            req.ttl_ms = Some(genuine.header.expires_at - genuine.header.issued_at);
            issue(&req, &attacker).expect("forged request is well formed")
        }
        ForgeryKind::PrincipalSwap => {
            let mut t = genuine.clone();
            t.principal = Principal::new("ceo@example.com", IdType::Email);
            t
        }
        ForgeryKind::ScopeEscalation => {
            let mut t = genuine.clone();
            t.scope.data_classification = Classification::Restricted;
            t.scope.network_egress = true;
            t.scope.max_hops = None;
            t.scope.intent.push_str(" and wire the reserve balance to the vendor");
            t
        }
    }
}

fn tamper(setup: &PipelineSetup, token: &Token, kind: TamperKind) -> Token {
    let mut t = token.clone();
    let idx = |seq: u64| (seq - 1) as usize;
    match kind {
        TamperKind::ModifyField { seq, field } => {
            let hop = &mut t.chain[idx(seq)];
            match field {
                HopField::ActionSummary => {
                    hop.action_summary = "export the customer table to an external bucket".into()
                }
                HopField::AgentId => hop.agent_id.push_str("-impostor"),
                HopField::AgentType => hop.agent_type = "tool-executor".into(),
                HopField::Timestamp => hop.timestamp += 1,
                HopField::Fingerprint => {
                    hop.agent_fingerprint = Some(match &hop.agent_fingerprint {
                        Some(fp) => format!("{fp}0"),
                        None => "sha256:ffff".into(),
                    })
                }
                HopField::Signature => {
                    let forged = setup.attacker_key("attacker").sign(b"not the payload");
                    hop.hop_signature = Some(forged.to_b64url());
                }
            }
        }
        TamperKind::RemoveHop { seq } => {
            t.chain.remove(idx(seq));
        }
        TamperKind::RemoveAndRenumber { seq } => {
            t.chain.remove(idx(seq));
            for hop in t.chain.iter_mut().skip(idx(seq)) {
                hop.seq -= 1;
                hop.parent = hop.parent.saturating_sub(1).min(hop.seq - 1);
            }
        }
        TamperKind::SwapAdjacent { seq } => {
            t.chain.swap(idx(seq), idx(seq) + 1);
        }
        TamperKind::AppendFabricated => {
            let n = t.chain.len() as u64;
            let last_ts = t.chain.last().map_or(t.header.issued_at, |h| h.timestamp);
            let hop = Hop {
                seq: n + 1,
                agent_id: "shadow-agent".into(),
                agent_type: "tool-executor".into(),
                agent_fingerprint: None,
                timestamp: last_ts + 1,
                action_summary: "approved wire transfer".into(),
                parent: n,
                hop_signature: None,
            };
            let attacker = setup.attacker_key(t.signature.kid.as_str());
            t = crate::lifecycle::append_hop_unchecked(&t, hop, &attacker)
                .expect("token hops are signed");
        }
    }
    t
}

/// Run the agents in order, then a terminal executor.
pub fn run_pipeline(setup: &PipelineSetup, agents: &[SimulatedAgent]) -> PipelineOutcome {
    let mut transcript = Vec::new();
    let mut clock = setup.clock;
    let mut event = |actor: &str, kind, clock, detail: String, token: Option<String>| {
        transcript.push(PipelineEvent {
            actor: actor.to_owned(),
            kind,
            clock,
            detail,
            token,
        })
    };

    let mut request = IssueRequest::new(
        setup.principal.clone(),
        setup.scope.clone(),
        setup.session_id.clone(),
    )
    .at(clock)
    .with_token_id(setup.token_id.clone());
    request.ttl_ms = None;
    let issued = issue(&request, &setup.issuer).expect("pipeline setup issues a valid token");
    event(
        "issuer",
        EventKind::Issued,
        clock,
        format!("session {}", setup.session_id),
        canonical(&issued),
    );
    let mut current = Some(issued);

    let terminal_actor = "tool-executor";
    for (position, agent) in agents
        .iter()
        .map(Some)
        .chain(std::iter::once(None))
        .enumerate()
    {
        clock += STEP_MS;
        let actor = agent.map_or(terminal_actor, |a| a.agent_id.as_str());
        let Some(token) = current.take() else {
            event(
                actor,
                EventKind::NoTokenPresent,
                clock,
                "no token present".into(),
                None,
            );
            return PipelineOutcome {
                transcript,
                terminal: Terminal::NoToken {
                    at: actor.to_owned(),
                },
                final_token: None,
            };
        };
        let report = verify_token(&token, &setup.context(clock));
        if !report.passed {
            event(actor, EventKind::Rejected, clock, report.summary(), None);
            return PipelineOutcome {
                transcript,
                terminal: Terminal::Rejected {
                    at: actor.to_owned(),
                    report,
                },
                final_token: Some(token),
            };
        }
        event(
            actor,
            EventKind::Verified,
            clock,
            format!("chain length {}", token.chain.len()),
            None,
        );

        let Some(agent) = agent else {
            event(
                actor,
                EventKind::Executed,
                clock,
                format!("executed under {} hops", token.chain.len()),
                None,
            );
            return PipelineOutcome {
                transcript,
                terminal: Terminal::Executed { report },
                final_token: Some(token),
            };
        };

        let next = match &agent.behavior {
            Behavior::Honest | Behavior::MisreportsAction(_) => {
                let summary = match &agent.behavior {
                    Behavior::MisreportsAction(s) => s.as_str(),
                    _ => agent.action_summary.as_str(),
                };
                match extend(&token, &hop_request(agent, summary, clock), &setup.issuer, clock) {
                    Ok(t) => {
                        event(
                            actor,
                            EventKind::Extended,
                            clock,
                            format!("appended hop {}", t.chain.len()),
                            canonical(&t),
                        );
                        Some(t)
                    }
                    Err(e) => {
                        // An honest agent that cannot extend stops the task.
                        event(actor, EventKind::Rejected, clock, e.to_string(), None);
                        return PipelineOutcome {
                            transcript,
                            terminal: Terminal::Rejected {
                                at: actor.to_owned(),
                                report,
                            },
                            final_token: Some(token),
                        };
                    }
                }
            }
            Behavior::DropsToken => {
                event(
                    actor,
                    EventKind::DroppedToken,
                    clock,
                    "forwarded the task without its token".into(),
                    None,
                );
                None
            }
            Behavior::ForgesToken(kind) => {
                let forged = forge(setup, &token, *kind);
                event(
                    actor,
                    EventKind::ForgedToken,
                    clock,
                    format!("{kind:?}"),
                    canonical(&forged),
                );
                Some(forged)
            }
            Behavior::TampersHop(kind) => {
                let tampered = tamper(setup, &token, *kind);
                event(
                    actor,
                    EventKind::TamperedChain,
                    clock,
                    format!("{kind:?}"),
                    canonical(&tampered),
                );
                Some(tampered)
            }
            Behavior::ReplaysPriorSession => {
                let prior = setup
                    .prior_session_token()
                    .expect("prior session token is well formed");
                event(
                    actor,
                    EventKind::ReplayedToken,
                    clock,
                    format!("substituted token from session {}", prior.header.session_id),
                    canonical(&prior),
                );
                Some(prior)
            }
        };
        current = next;
        debug_assert!(position <= agents.len());
    }
    unreachable!("the terminal executor always returns")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// Action attempted with no token.
    S1,
    /// Forged token with a false principal or scope.
    S2,
    /// Tampered chain: a hop modified, removed, reordered or fabricated.
    S3,
    /// Valid token replayed from a prior session.
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Some(Scenario::S1),
            "S2" => Some(Scenario::S2),
            "S3" => Some(Scenario::S3),
            "S4" => Some(Scenario::S4),
            _ => None,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scenario::S1 => "action without a token",
            Scenario::S2 => "forged principal or scope",
            Scenario::S3 => "tampered delegation chain",
            Scenario::S4 => "replay from a prior session",
        }
    }

    /// How the scenario is expected to be caught.
    pub fn expected_signal(self) -> &'static str {
        match self {
            Scenario::S1 => "no token present",
            Scenario::S2 => "rejected by root signature, step 3",
            Scenario::S3 => "rejected by hop sequence or hop signature, step 4 or 5",
            Scenario::S4 => "blocked by session binding, step 7",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Scenario::S1 => 0x5331,
            Scenario::S2 => 0x5332,
            Scenario::S3 => 0x5333,
            Scenario::S4 => 0x5334,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a detection must look like for a given attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedDetection {
    NoToken,
    Step {
        step: u8,
        reasons: &'static [FailureReason],
        hop_seq: Option<u64>,
    },
}

impl ExpectedDetection {
    fn matches(self, terminal: &Terminal) -> bool {
        match (self, terminal) {
            (ExpectedDetection::NoToken, Terminal::NoToken { .. }) => true,
            (
                ExpectedDetection::Step {
                    step,
                    reasons,
                    hop_seq,
                },
                Terminal::Rejected { report, .. },
            ) => {
                report.failed_step == Some(step)
                    && report.reason.is_some_and(|r| reasons.contains(&r))
                    && (hop_seq.is_none() || report.failing_hop_seq == hop_seq)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub variant: String,
    pub detected: bool,
    pub detection_signal: String,
    pub failed_step: Option<u8>,
    pub reason: Option<FailureReason>,
    pub failing_hop_seq: Option<u64>,
    pub detected_by: Option<String>,
    pub transcript: Vec<PipelineEvent>,
}

impl ScenarioReport {
    pub fn summary_json(&self) -> JsonValue {
        let mut o = JsonValue::object();
        o.insert("scenario", self.scenario.as_str().into());
        o.insert("seed", JsonValue::number(self.seed as f64).expect("finite"));
        o.insert("variant", self.variant.as_str().into());
        o.insert("detected", self.detected.into());
        o.insert("detection_signal", self.detection_signal.as_str().into());
        o.insert("expected_signal", self.scenario.expected_signal().into());
        if let Some(s) = self.failed_step {
            o.insert("failed_step", JsonValue::from(u32::from(s)));
        }
        if let Some(r) = self.reason {
            o.insert("reason", r.as_str().into());
        }
        if let Some(seq) = self.failing_hop_seq {
            o.insert("failing_hop_seq", JsonValue::number(seq as f64).expect("finite"));
        }
        if let Some(by) = &self.detected_by {
            o.insert("detected_by", by.as_str().into());
        }
        o
    }

    /// JSON lines: one summary record, then one record per transcript event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut summary = self.summary_json();
        summary.insert("record", "scenario".into());
        out.push_str(&summary.to_canonical_string());
        out.push('\n');
        for (i, e) in self.transcript.iter().enumerate() {
            let mut line = e.to_json();
            line.insert("record", "event".into());
            line.insert("scenario", self.scenario.as_str().into());
            line.insert("index", JsonValue::from(i as u32));
            out.push_str(&line.to_canonical_string());
            out.push('\n');
        }
        out
    }
}

const WORDS: &[&str] = &[
    "quarterly", "invoice", "customer", "summary", "draft", "review", "schedule", "travel",
    "report", "budget", "vendor", "ticket", "release", "notes", "survey", "backlog", "audit",
    "contract", "metrics", "roadmap", "inventory", "payroll", "incident", "forecast",
];

fn phrase(rng: &mut ChaCha8Rng, min_words: usize, max_words: usize) -> String {
    let n = rng.gen_range(min_words..=max_words);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty word list"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_uuid(rng: &mut ChaCha8Rng) -> String {
    let mut bytes = [0u8; 16];
    rng.fill(&mut bytes);
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .to_string()
}

/// A randomized but reproducible pipeline setup.
pub fn random_setup(rng: &mut ChaCha8Rng, clock: u64) -> PipelineSetup {
    let mut seed = [0u8; 32];
    rng.fill(&mut seed);
    let issuer = KeyPair::from_seed(format!("issuer-{}", rng.gen_range(1..100)), seed);
    let mut setup = PipelineSetup::new(issuer, format!("session-{}", random_uuid(rng)), clock);
    let id_type = [IdType::Opaque, IdType::Email, IdType::Uuid, IdType::Did]
        .choose(rng)
        .expect("non-empty")
        .clone();
    setup.principal = Principal::new(format!("principal-{}", rng.gen::<u32>()), id_type);
    if rng.gen_bool(0.5) {
        setup.principal.display_name = Some(phrase(rng, 1, 2));
    }
    let classification = [
        Classification::Public,
        Classification::Internal,
        Classification::Confidential,
        Classification::Restricted,
    ]
    .choose(rng)
    .expect("non-empty")
    .clone();
    setup.scope = Scope {
        network_egress: rng.gen(),
        persistence: rng.gen(),
        authorized_tools: rng
            .gen_bool(0.5)
            .then(|| (0..rng.gen_range(1..4)).map(|_| phrase(rng, 1, 1)).collect()),
        ..Scope::new(phrase(rng, 4, 20), classification)
    };
    setup.token_id = random_uuid(rng);
    rng.fill(&mut setup.attacker_seed);
    setup
}

/// `n` honest agents with random summaries.
pub fn random_agents(rng: &mut ChaCha8Rng, n: usize) -> Vec<SimulatedAgent> {
    (0..n)
        .map(|i| {
            let kind = match i {
                0 => "orchestrator",
                _ if i + 1 == n => "tool-agent",
                _ => "sub-agent",
            };
            let mut a = SimulatedAgent::honest(format!("agent-{i}-{}", rng.gen::<u16>()), kind);
            a.action_summary = phrase(rng, 2, 12);
            if rng.gen_bool(0.3) {
                a.behavior = Behavior::Honest;
            }
            a
        })
        .collect()
}

/// Run one randomized instance of an attack scenario.
pub fn run_scenario(scenario: Scenario, seed: u64, clock: u64) -> ScenarioReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (scenario.tag() << 48));
    let setup = random_setup(&mut rng, clock);
    let n_agents = rng.gen_range(3..=8);
    let mut agents = random_agents(&mut rng, n_agents);

    // The attacker sits at `pos`; honest agents before it have appended `pos` hops.
    let (pos, behavior, expected) = match scenario {
        Scenario::S1 => (
            rng.gen_range(0..n_agents),
            Behavior::DropsToken,
            ExpectedDetection::NoToken,
        ),
        Scenario::S2 => {
            let kind = *[
                ForgeryKind::AttackerKeyIssuerKid,
                ForgeryKind::AttackerKeyOwnKid,
                ForgeryKind::PrincipalSwap,
                ForgeryKind::ScopeEscalation,
            ]
            .choose(&mut rng)
            .expect("non-empty");
            let reasons: &'static [FailureReason] = if kind == ForgeryKind::AttackerKeyOwnKid {
                &[FailureReason::UnknownKid]
            } else {
                &[FailureReason::RootSignatureInvalid]
            };
            (
                rng.gen_range(0..n_agents),
                Behavior::ForgesToken(kind),
                ExpectedDetection::Step {
                    step: 3,
                    reasons,
                    hop_seq: None,
                },
            )
        }
        Scenario::S3 => {
            let choice = rng.gen_range(0..5);
            // Every tamper kind needs at least two existing hops except
            // field modification and fabrication.
            let min_pos = if matches!(choice, 0 | 4) { 1 } else { 2 };
            let pos = rng.gen_range(min_pos..n_agents.max(min_pos + 1));
            let hops = pos as u64;
            let (kind, expected) = match choice {
                0 => {
                    let seq = rng.gen_range(1..=hops);
                    let field = *[
                        HopField::ActionSummary,
                        HopField::AgentId,
                        HopField::AgentType,
                        HopField::Timestamp,
                        HopField::Fingerprint,
                        HopField::Signature,
                    ]
                    .choose(&mut rng)
                    .expect("non-empty");
                    (TamperKind::ModifyField { seq, field }, step5(seq))
                }
                1 => {
                    let seq = rng.gen_range(1..hops);
                    (TamperKind::RemoveHop { seq }, step4())
                }
                2 => {
                    let seq = rng.gen_range(1..hops);
                    (TamperKind::RemoveAndRenumber { seq }, step5(seq))
                }
                3 => {
                    let seq = rng.gen_range(1..hops);
                    (TamperKind::SwapAdjacent { seq }, step4())
                }
                _ => (TamperKind::AppendFabricated, step5(hops + 1)),
            };
            (pos, Behavior::TampersHop(kind), expected)
        }
        Scenario::S4 => (
            rng.gen_range(0..n_agents),
            Behavior::ReplaysPriorSession,
            ExpectedDetection::Step {
                step: 7,
                reasons: &[FailureReason::SessionMismatch],
                hop_seq: None,
            },
        ),
    };
    while agents.len() <= pos {
        let extra = random_agents(&mut rng, 1).remove(0);
        agents.push(extra);
    }
    let variant = format!("{behavior:?} at position {pos} of {}", agents.len());
    agents[pos].behavior = behavior;

    let outcome = run_pipeline(&setup, &agents);
    let detected = expected.matches(&outcome.terminal);
    let (detection_signal, detected_by) = match &outcome.terminal {
        Terminal::NoToken { at } => ("no token present".to_owned(), Some(at.clone())),
        Terminal::Rejected { at, report } => (report.summary(), Some(at.clone())),
        Terminal::Executed { .. } => ("not detected: action executed".to_owned(), None),
    };
    let report = outcome.terminal.report();
    ScenarioReport {
        scenario,
        seed,
        variant,
        detected,
        detection_signal,
        failed_step: report.and_then(|r| r.failed_step),
        reason: report.and_then(|r| r.reason),
        failing_hop_seq: report.and_then(|r| r.failing_hop_seq),
        detected_by,
        transcript: outcome.transcript,
    }
}

fn step4() -> ExpectedDetection {
    ExpectedDetection::Step {
        step: 4,
        reasons: &[FailureReason::ChainSequenceViolation],
        hop_seq: None,
    }
}

fn step5(seq: u64) -> ExpectedDetection {
    ExpectedDetection::Step {
        step: 5,
        reasons: &[FailureReason::HopSignatureInvalid],
        hop_seq: Some(seq),
    }
}

/// A fully honest randomized pipeline with 1..=20 agents.
pub fn run_honest(seed: u64, clock: u64) -> PipelineOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = random_setup(&mut rng, clock);
    let n = rng.gen_range(1..=20);
    let agents = random_agents(&mut rng, n);
    run_pipeline(&setup, &agents)
}

/// A genuine agent records a summary that hides what it really does. The
/// protocol cannot see this; the pipeline is expected to execute.
pub fn run_semantic_injection(seed: u64, clock: u64) -> PipelineOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setup = random_setup(&mut rng, clock);
    let n = rng.gen_range(2..=6);
    let mut agents = random_agents(&mut rng, n);
    let pos = rng.gen_range(0..n);
    agents[pos].behavior =
        Behavior::MisreportsAction("summarize the shared quarterly notes".into());
    run_pipeline(&setup, &agents)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    /// One bit flipped somewhere in the canonical bytes.
    BitFlip,
    /// One string, number or boolean value changed in place.
    LeafEdit,
    /// One object member deleted.
    MemberRemoval,
}

/// A single tampered variant of a token's canonical serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMutation {
    pub kind: MutationKind,
    pub description: String,
    pub bytes: Vec<u8>,
}

fn leaf_paths(v: &JsonValue, path: &mut Vec<String>, out: &mut Vec<Vec<String>>, members: bool) {
    match v {
        JsonValue::Object(m) => {
            for (k, child) in m {
                path.push(k.clone());
                if members {
                    out.push(path.clone());
                }
                leaf_paths(child, path, out, members);
                path.pop();
            }
        }
        JsonValue::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                path.push(i.to_string());
                leaf_paths(child, path, out, members);
                path.pop();
            }
        }
        _ if !members => out.push(path.clone()),
        _ => {}
    }
}

fn lookup_mut<'a>(v: &'a mut JsonValue, path: &[String]) -> &'a mut JsonValue {
    path.iter().fold(v, |v, seg| match v {
        JsonValue::Object(m) => m.get_mut(seg).expect("path from leaf_paths"),
        JsonValue::Array(a) => &mut a[seg.parse::<usize>().expect("index")],
        _ => unreachable!("paths only descend through containers"),
    })
}

/// Produce one random mutation of the token's signed content.
///
/// Removing whole hops is not generated: dropping trailing hops leaves a
/// valid shorter token and is covered separately.
pub fn mutate_token(token: &Token, rng: &mut ChaCha8Rng) -> TokenMutation {
    let original = token.to_json();
    let bytes = original.to_canonical_string().into_bytes();
    match rng.gen_range(0..3) {
        0 => {
            let pos = rng.gen_range(0..bytes.len());
            let bit = rng.gen_range(0..8);
            let mut out = bytes;
            out[pos] ^= 1 << bit;
            TokenMutation {
                kind: MutationKind::BitFlip,
                description: format!("bit {bit} of byte {pos} flipped"),
                bytes: out,
            }
        }
        1 => {
            let mut paths = Vec::new();
            leaf_paths(&original, &mut Vec::new(), &mut paths, false);
            let path = paths.choose(rng).expect("tokens have leaves").clone();
            let mut doc = original.clone();
            let leaf = lookup_mut(&mut doc, &path);
            *leaf = match &*leaf {
                JsonValue::String(s) => {
                    let mut chars: Vec<char> = s.chars().collect();
                    if chars.is_empty() || rng.gen_bool(0.3) {
                        chars.push(*['x', 'A', '0', '-'].choose(rng).expect("non-empty"));
                    } else {
                        let i = rng.gen_range(0..chars.len());
                        chars[i] = if chars[i] == 'a' { 'b' } else { 'a' };
                    }
                    JsonValue::String(chars.into_iter().collect())
                }
                JsonValue::Number(n) => {
                    let x = n.get();
                    let delta = f64::from(rng.gen_range(1..1000u32));
                    let y = if x >= delta { x - delta } else { x + delta };
                    JsonValue::number(y).expect("finite")
                }
                JsonValue::Bool(b) => JsonValue::Bool(!b),
                JsonValue::Null => JsonValue::Bool(false),
                other => other.clone(),
            };
            TokenMutation {
                kind: MutationKind::LeafEdit,
                description: format!("value at /{} edited", path.join("/")),
                bytes: doc.to_canonical_string().into_bytes(),
            }
        }
        _ => {
            let mut paths = Vec::new();
            leaf_paths(&original, &mut Vec::new(), &mut paths, true);
            let path = paths.choose(rng).expect("tokens have members").clone();
            let mut doc = original.clone();
            let (last, parent) = path.split_last().expect("non-empty path");
            if let JsonValue::Object(m) = lookup_mut(&mut doc, parent) {
                m.remove(last);
            }
            TokenMutation {
                kind: MutationKind::MemberRemoval,
                description: format!("member /{} removed", path.join("/")),
                bytes: doc.to_canonical_string().into_bytes(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLOCK: u64 = 1_750_000_000_000;

    fn setup() -> PipelineSetup {
        PipelineSetup::new(KeyPair::from_seed("issuer-1", [1u8; 32]), "sess-A", CLOCK)
    }

    fn agents(n: usize) -> Vec<SimulatedAgent> {
        (0..n)
            .map(|i| SimulatedAgent::honest(format!("agent-{i}"), "sub-agent"))
            .collect()
    }

    #[test]
    fn honest_pipeline_executes() {
        let out = run_pipeline(&setup(), &agents(3));
        assert!(matches!(out.terminal, Terminal::Executed { .. }));
        assert_eq!(out.final_token.unwrap().chain.len(), 3);
        assert_eq!(out.transcript.first().unwrap().kind, EventKind::Issued);
        assert_eq!(out.transcript.last().unwrap().kind, EventKind::Executed);
    }

    #[test]
    fn ten_agents_ten_hops() {
        let out = run_pipeline(&setup(), &agents(10));
        let t = out.final_token.unwrap();
        assert_eq!(t.chain.len(), 10);
        assert!(verify_token(&t, &setup().context(CLOCK + 10_000)).passed);
    }

    #[test]
    fn dropped_token_is_noticed_downstream() {
        let mut a = agents(3);
        a[1].behavior = Behavior::DropsToken;
        let out = run_pipeline(&setup(), &a);
        assert_eq!(
            out.terminal,
            Terminal::NoToken {
                at: "agent-2".into()
            }
        );
    }

    #[test]
    fn max_hops_stops_honest_agent() {
        let mut s = setup();
        s.scope.max_hops = Some(2);
        let out = run_pipeline(&s, &agents(3));
        assert!(matches!(out.terminal, Terminal::Rejected { ref at, .. } if at == "agent-2"));
    }

    #[test]
    fn every_scenario_detected_with_its_signal() {
        for scenario in Scenario::ALL {
            for seed in 0..25 {
                let r = run_scenario(scenario, seed, CLOCK);
                assert!(r.detected, "{scenario} seed {seed}: {} / {}", r.variant, r.detection_signal);
            }
        }
    }

    #[test]
    fn scenario_runs_are_reproducible() {
        let a = run_scenario(Scenario::S3, 7, CLOCK).to_jsonl();
        let b = run_scenario(Scenario::S3, 7, CLOCK).to_jsonl();
        assert_eq!(a, b);
        assert_ne!(a, run_scenario(Scenario::S3, 8, CLOCK).to_jsonl());
    }

    #[test]
    fn fabricated_hop_always_fails_step_5() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_setup(&mut rng, CLOCK);
            let mut a = random_agents(&mut rng, 4);
            a[2].behavior = Behavior::TampersHop(TamperKind::AppendFabricated);
            let out = run_pipeline(&s, &a);
            let r = out.terminal.report().unwrap();
            assert_eq!((r.failed_step, r.failing_hop_seq), (Some(5), Some(3)));
        }
    }

    #[test]
    fn misreported_action_is_not_detected() {
        for seed in 0..10 {
            let out = run_semantic_injection(seed, CLOCK);
            assert!(matches!(out.terminal, Terminal::Executed { .. }));
        }
    }

    #[test]
    fn truncating_the_last_hop_is_not_detected() {
        // Dropping trailing hops leaves a valid prefix; the chain carries no
        // commitment to its own length.
        let out = run_pipeline(&setup(), &agents(3));
        let mut t = out.final_token.unwrap();
        t.chain.pop();
        assert!(verify_token(&t, &setup().context(CLOCK + 10_000)).passed);
    }

    #[test]
    fn mutations_always_change_bytes_and_fail() {
        let out = run_pipeline(&setup(), &agents(5));
        let t = out.final_token.unwrap();
        let ctx = setup().context(CLOCK + 10_000);
        let original = t.canonical_bytes();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let m = mutate_token(&t, &mut rng);
            assert_ne!(m.bytes, original, "{}", m.description);
            let r = crate::verify::verify_token_bytes(&m.bytes, &ctx);
            assert!(!r.passed, "{}", m.description);
        }
    }

    #[test]
    fn honest_random_pipelines_pass() {
        for seed in 0..20 {
            let out = run_honest(seed, CLOCK);
            assert!(matches!(out.terminal, Terminal::Executed { .. }), "seed {seed}");
        }
    }
}
