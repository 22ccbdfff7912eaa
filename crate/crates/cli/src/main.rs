use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use hdp_core::corpus::{generate_corpus, run_corpus};
use hdp_core::harness::{run_scenario, Scenario, ScenarioReport};
use hdp_core::json::{self, JsonValue};
use hdp_core::lifecycle::{extend, issue, now_ms, strip_for_audit, HopRequest, IssueRequest, LifecycleError};
use hdp_core::token::{
    validate_audit_record, validate_structure, AuditRecord, Classification, IdType, Principal, Scope,
    Token,
};
use hdp_core::transport::parse_wellknown;
use hdp_core::verify::{verify_lineage, verify_token, verify_token_bytes, SessionContext};
use hdp_core::{KeyPair, PublicKey};

/// Fixed clock used by `simulate` unless overridden, so reports are reproducible.
const SIMULATION_CLOCK: u64 = 1_750_000_000_000;

mod exit {
    pub const IO: u8 = 1;
    pub const VALIDATION: u8 = 2;
    pub const LIFECYCLE: u8 = 3;
    pub const VERIFICATION: u8 = 4;
    pub const SIMULATION: u8 = 5;
}

#[derive(Parser)]
#[command(name = "hdp", version, about = "Issue, extend, verify and inspect HDP delegation tokens")]
struct Cli {
    /// Emit a single JSON document instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,

    /// Use this Unix time in milliseconds instead of the system clock.
    #[arg(long, global = true, hide = true, value_name = "MS")]
    clock_override: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an Ed25519 issuer key pair (secret and public key files).
    Keygen {
        #[arg(long)]
        kid: String,
        /// Secret key file; the public key goes next to it with a .pub extension.
        #[arg(long)]
        out: PathBuf,
        /// Replace existing key files.
        #[arg(long)]
        force: bool,
    },
    /// Issue a new token with an empty delegation chain.
    Issue(IssueArgs),
    /// Append one signed hop to a token.
    Extend {
        #[arg(long)]
        key: PathBuf,
        /// Token file; stdin when omitted or "-".
        #[arg(long)]
        token: Option<PathBuf>,
        #[arg(long)]
        agent_id: String,
        #[arg(long, default_value = "")]
        agent_type: String,
        #[arg(long)]
        action: String,
        #[arg(long)]
        fingerprint: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the seven verification steps against a token.
    Verify {
        /// Issuer public key file; repeatable.
        #[arg(long)]
        pubkey: Vec<PathBuf>,
        /// Well-known issuer key document.
        #[arg(long)]
        wellknown_file: Option<PathBuf>,
        #[arg(long)]
        token: Option<PathBuf>,
        #[arg(long)]
        session: String,
        #[arg(long, default_value_t = 0)]
        skew_ms: u64,
        /// Also reject tokens issued after the current time.
        #[arg(long)]
        strict_issued_at: bool,
    },
    /// Verify an oldest-first sequence of re-authorized tokens.
    Lineage {
        #[arg(long)]
        pubkey: Vec<PathBuf>,
        #[arg(long)]
        wellknown_file: Option<PathBuf>,
        #[arg(long)]
        session: String,
        #[arg(required = true)]
        tokens: Vec<PathBuf>,
    },
    /// Show a token's contents without checking signatures.
    Inspect {
        #[arg(long)]
        token: Option<PathBuf>,
    },
    /// Remove the principal, producing an audit-only record.
    Strip {
        #[arg(long)]
        token: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run attack scenarios through the simulated agent pipeline.
    Simulate {
        #[arg(long, value_enum, default_value_t = ScenarioArg::All)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeded runs per scenario, starting at --seed.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Write transcripts as JSON lines.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Measure verification latency and token size.
    Bench {
        #[arg(long, default_value_t = 10)]
        hops: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Generate or replay the golden conformance corpus.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(clap::Args)]
struct IssueArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    principal_id: String,
    #[arg(long, default_value = "opaque")]
    id_type: String,
    #[arg(long)]
    display_name: Option<String>,
    #[arg(long)]
    intent: String,
    #[arg(long)]
    classification: String,
    #[arg(long)]
    egress: bool,
    #[arg(long)]
    persistence: bool,
    #[arg(long)]
    session: String,
    #[arg(long)]
    ttl_ms: Option<u64>,
    #[arg(long)]
    max_hops: Option<u64>,
    /// Token id of the token this one re-authorizes.
    #[arg(long)]
    parent: Option<String>,
    /// Comma-separated tool names.
    #[arg(long, value_delimiter = ',')]
    tools: Option<Vec<String>>,
    /// Comma-separated resource identifiers.
    #[arg(long, value_delimiter = ',')]
    resources: Option<Vec<String>>,
    /// Fixed token id instead of a random one.
    #[arg(long, hide = true)]
    token_id: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CorpusAction {
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    Run {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    S1,
    S2,
    S3,
    S4,
    All,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self::new(exit::IO, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Final output of a command: text for humans, a document for `--json`,
/// and the exit code.
struct Outcome {
    text: String,
    json: JsonValue,
    code: u8,
}

impl Outcome {
    fn ok(text: String, json: JsonValue) -> Self {
        Outcome { text, json, code: 0 }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_mode = cli.json;
    match run(cli) {
        Ok(out) => {
            let text = if json_mode {
                out.json.to_canonical_string()
            } else {
                out.text
            };
            let mut stdout = io::stdout().lock();
            // A closed pipe downstream is not worth a panic.
            let _ = writeln!(stdout, "{}", text.trim_end_matches('\n'));
            ExitCode::from(out.code)
        }
        Err(e) => {
            if json_mode {
                let mut doc = JsonValue::object();
                doc.insert("error", e.message.as_str().into());
                doc.insert("exit_code", JsonValue::from(u32::from(e.code)));
                println!("{doc}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let clock = cli.clock_override;
    let now = || clock.unwrap_or_else(now_ms);
    match cli.command {
        Command::Keygen { kid, out, force } => keygen(&kid, &out, force),
        Command::Issue(args) => cmd_issue(args, now()),
        Command::Extend {
            key,
            token,
            agent_id,
            agent_type,
            action,
            fingerprint,
            out,
        } => {
            let key = load_secret_key(&key)?;
            let token = read_token(token.as_deref())?;
            let mut req = HopRequest::new(agent_id, agent_type, action);
            req.agent_fingerprint = fingerprint;
            let next = extend(&token, &req, &key, now()).map_err(lifecycle_error)?;
            emit_token(next.to_json(), out.as_deref())
        }
        Command::Verify {
            pubkey,
            wellknown_file,
            token,
            session,
            skew_ms,
            strict_issued_at,
        } => {
            let keys = load_public_keys(&pubkey, wellknown_file.as_deref())?;
            let mut ctx = SessionContext::new(keys, session, now())
                .map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?
                .with_clock_skew_ms(skew_ms);
            ctx.reject_future_issued = strict_issued_at;
            let bytes = read_input(token.as_deref())?;
            let report = verify_token_bytes(&bytes, &ctx);
            let text = if report.passed {
                format!("PASS  {}", report.summary())
            } else {
                format!("FAIL  {}", report.summary())
            };
            Ok(Outcome {
                text,
                json: report.to_json(),
                code: if report.passed { 0 } else { exit::VERIFICATION },
            })
        }
        Command::Lineage {
            pubkey,
            wellknown_file,
            session,
            tokens,
        } => {
            let keys = load_public_keys(&pubkey, wellknown_file.as_deref())?;
            let ctx = SessionContext::new(keys, session, now())
                .map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?;
            let tokens = tokens
                .iter()
                .map(|p| read_token(Some(p)))
                .collect::<Result<Vec<_>>>()?;
            let report = verify_lineage(&tokens, &ctx);
            let mut doc = JsonValue::object();
            doc.insert("passed", report.passed.into());
            if let Some(f) = &report.failure {
                doc.insert("failure", f.kind().into());
                if let Some(i) = f.index() {
                    doc.insert("index", JsonValue::from(i as u32));
                }
                doc.insert("detail", f.to_string().into());
            }
            doc.insert(
                "tokens",
                JsonValue::Array(report.token_reports.iter().map(|r| r.to_json()).collect()),
            );
            let text = match &report.failure {
                None => format!("PASS  lineage of {} tokens", tokens.len()),
                Some(f) => format!("FAIL  {}: {f}", f.kind()),
            };
            Ok(Outcome {
                text,
                json: doc,
                code: if report.passed { 0 } else { exit::VERIFICATION },
            })
        }
        Command::Inspect { token } => inspect(&read_input(token.as_deref())?),
        Command::Strip { token, out } => {
            let token = read_token(token.as_deref())?;
            emit_token(strip_for_audit(&token).to_json(), out.as_deref())
        }
        Command::Simulate {
            scenario,
            seed,
            runs,
            report,
        } => simulate(scenario, seed, runs, report.as_deref(), clock.unwrap_or(SIMULATION_CLOCK)),
        Command::Bench { hops, iterations } => bench(hops, iterations, now()),
        Command::Corpus { action } => corpus(action),
    }
}

fn read_input(path: Option<&Path>) -> Result<Vec<u8>> {
    match path {
        Some(p) if p != Path::new("-") => fs::read(p).map_err(|e| CliError::io(p, e)),
        _ => {
            let mut buf = Vec::new();
            io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| CliError::io(Path::new("<stdin>"), e))?;
            Ok(buf)
        }
    }
}

fn parse_json(bytes: &[u8], what: &str) -> Result<JsonValue> {
    json::parse(bytes).map_err(|e| CliError::new(exit::VALIDATION, format!("{what}: {e}")))
}

fn read_token(path: Option<&Path>) -> Result<Token> {
    let v = parse_json(&read_input(path)?, "token")?;
    if v.get("audit_only").is_some() {
        return Err(CliError::new(
            exit::VALIDATION,
            "token: audit-only record; principal removed",
        ));
    }
    Token::from_json(&v).map_err(|e| CliError::new(exit::VALIDATION, format!("token: {e}")))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn emit_token(doc: JsonValue, out: Option<&Path>) -> Result<Outcome> {
    let text = doc.to_canonical_string();
    match out {
        Some(p) => {
            write_file(p, &format!("{text}\n"))?;
            let mut json = JsonValue::object();
            json.insert("written", p.display().to_string().into());
            Ok(Outcome::ok(format!("wrote {}", p.display()), json))
        }
        None => Ok(Outcome::ok(text, doc)),
    }
}

fn load_secret_key(path: &Path) -> Result<KeyPair> {
    let doc = parse_json(&fs::read(path).map_err(|e| CliError::io(path, e))?, "key file")?;
    KeyPair::from_key_file(&doc).map_err(|e| {
        CliError::new(exit::VALIDATION, format!("{}: {e}", path.display()))
    })
}

fn load_public_keys(files: &[PathBuf], wellknown: Option<&Path>) -> Result<Vec<PublicKey>> {
    let mut keys = Vec::new();
    for p in files {
        let doc = parse_json(&fs::read(p).map_err(|e| CliError::io(p, e))?, "public key file")?;
        keys.push(
            PublicKey::from_key_file(&doc)
                .map_err(|e| CliError::new(exit::VALIDATION, format!("{}: {e}", p.display())))?,
        );
    }
    if let Some(p) = wellknown {
        let doc = parse_json(&fs::read(p).map_err(|e| CliError::io(p, e))?, "key document")?;
        keys.extend(
            parse_wellknown(&doc)
                .map_err(|e| CliError::new(exit::VALIDATION, format!("{}: {e}", p.display())))?,
        );
    }
    if keys.is_empty() {
        return Err(CliError::new(
            exit::VALIDATION,
            "no issuer keys: pass --pubkey or --wellknown-file",
        ));
    }
    Ok(keys)
}

fn lifecycle_error(e: LifecycleError) -> CliError {
    let code = match &e {
        LifecycleError::InvalidRequest(_)
        | LifecycleError::StructurallyInvalid(_)
        | LifecycleError::InvalidHopRequest(_) => exit::VALIDATION,
        _ => exit::LIFECYCLE,
    };
    CliError::new(code, e.to_string())
}

fn keygen(kid: &str, out: &Path, force: bool) -> Result<Outcome> {
    let key = KeyPair::generate(kid, None)
        .map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?;
    // Self-test before anything touches disk.
    let probe = b"hdp keygen self-test";
    if !key.public_key().verify(probe, &key.sign(probe)) {
        return Err(CliError::new(exit::IO, "generated key failed its sign/verify self-test"));
    }
    let pub_path = out.with_extension("pub");
    for p in [out, pub_path.as_path()] {
        if p.exists() && !force {
            return Err(CliError::new(
                exit::IO,
                format!("{} exists; pass --force to replace it", p.display()),
            ));
        }
    }
    write_secret(out, &format!("{}\n", key.to_key_file().to_pretty_string()))?;
    write_file(&pub_path, &format!("{}\n", key.public_key().to_key_file().to_pretty_string()))?;

    let public = key.public_key().to_b64url();
    let mut doc = JsonValue::object();
    doc.insert("kid", kid.into());
    doc.insert("public_key", public.as_str().into());
    doc.insert("secret_key_file", out.display().to_string().into());
    doc.insert("public_key_file", pub_path.display().to_string().into());
    Ok(Outcome::ok(
        format!(
            "kid         {kid}\npublic key  {public}\nwrote       {} (secret), {}",
            out.display(),
            pub_path.display()
        ),
        doc,
    ))
}

#[cfg(unix)]
fn write_secret(path: &Path, contents: &str) -> Result<()> {
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(not(unix))]
fn write_secret(path: &Path, contents: &str) -> Result<()> {
    write_file(path, contents)
}

fn cmd_issue(a: IssueArgs, now: u64) -> Result<Outcome> {
    let key = load_secret_key(&a.key)?;
    let principal = Principal {
        display_name: a.display_name,
        ..Principal::new(a.principal_id, IdType::parse(&a.id_type))
    };
    let scope = Scope {
        network_egress: a.egress,
        persistence: a.persistence,
        authorized_tools: a.tools,
        authorized_resources: a.resources,
        max_hops: a.max_hops,
        ..Scope::new(a.intent, Classification::parse(&a.classification))
    };
    let mut req = IssueRequest::new(principal, scope, a.session.clone()).at(now);
    req.ttl_ms = a.ttl_ms;
    req.parent_token_id = a.parent;
    req.token_id = a.token_id;
    let token = issue(&req, &key).map_err(lifecycle_error)?;

    let ctx = SessionContext::new([key.public_key()], a.session, now)
        .map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?;
    let report = verify_token(&token, &ctx);
    if !report.passed {
        return Err(CliError::new(
            exit::VALIDATION,
            format!("issued token does not self-verify: {}", report.summary()),
        ));
    }
    emit_token(token.to_json(), a.out.as_deref())
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_owned()
    } else {
        let mut t: String = s.chars().take(max - 1).collect();
        t.push('…');
        t
    }
}

fn inspect(bytes: &[u8]) -> Result<Outcome> {
    let v = parse_json(bytes, "input")?;
    let audit_only = v.get("audit_only").is_some();
    let (header, scope, chain, signature, principal, warnings) = if audit_only {
        let r = AuditRecord::from_json(&v)
            .map_err(|e| CliError::new(exit::VALIDATION, format!("audit record: {e}")))?;
        let w = validate_audit_record(&r);
        (r.header, r.scope, r.chain, r.signature, None, w)
    } else {
        let t = Token::from_json(&v)
            .map_err(|e| CliError::new(exit::VALIDATION, format!("token: {e}")))?;
        let w = validate_structure(&t);
        (t.header, t.scope, t.chain, t.signature, Some(t.principal), w)
    };

    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    if audit_only {
        line("audit-only: principal removed".into());
    }
    line(format!("token_id     {}", header.token_id));
    line(format!("version      {}", header.version));
    line(format!("session_id   {}", header.session_id));
    line(format!("issued_at    {}", header.issued_at));
    line(format!(
        "expires_at   {} (ttl {} ms)",
        header.expires_at,
        header.expires_at.saturating_sub(header.issued_at)
    ));
    line(format!(
        "parent       {}",
        header.parent_token_id.as_deref().unwrap_or("-")
    ));
    if let Some(p) = &principal {
        line(format!(
            "principal    {} ({}){}",
            p.id,
            p.id_type,
            p.display_name
                .as_deref()
                .map(|n| format!(" \"{n}\""))
                .unwrap_or_default()
        ));
    }
    line(format!("intent       {}", scope.intent));
    line(format!(
        "scope        classification={} egress={} persistence={} max_hops={}",
        scope.data_classification,
        scope.network_egress,
        scope.persistence,
        scope.max_hops.map_or("-".to_owned(), |m| m.to_string())
    ));
    if let Some(tools) = &scope.authorized_tools {
        line(format!("tools        {}", tools.join(", ")));
    }
    if let Some(res) = &scope.authorized_resources {
        line(format!("resources    {}", res.join(", ")));
    }
    line(format!("signed by    {} ({})", signature.kid, signature.alg));
    line(format!("chain        {} hops", chain.len()));
    if !chain.is_empty() {
        line(format!("  {:>4}  {:>6}  {:<20}  {}", "seq", "parent", "agent_id", "action_summary"));
        for h in &chain {
            line(format!(
                "  {:>4}  {:>6}  {:<20}  {}",
                h.seq,
                h.parent,
                truncate(&h.agent_id, 20),
                truncate(&h.action_summary, 60)
            ));
        }
    }
    for w in &warnings {
        line(format!("warning: {w}"));
    }

    let mut doc = JsonValue::object();
    doc.insert("audit_only", audit_only.into());
    doc.insert("token_id", header.token_id.as_str().into());
    doc.insert(
        "parent_token_id",
        header
            .parent_token_id
            .as_deref()
            .map_or(JsonValue::Null, JsonValue::from),
    );
    doc.insert("hops", JsonValue::from(chain.len() as u32));
    doc.insert("size_bytes", JsonValue::from(json::canonicalize(&v).len() as u32));
    doc.insert(
        "warnings",
        JsonValue::Array(warnings.iter().map(|w| w.to_string().into()).collect()),
    );
    doc.insert("document", v);
    Ok(Outcome::ok(out, doc))
}

fn simulate(
    which: ScenarioArg,
    seed: u64,
    runs: u64,
    report: Option<&Path>,
    clock: u64,
) -> Result<Outcome> {
    let scenarios: Vec<Scenario> = match which {
        ScenarioArg::S1 => vec![Scenario::S1],
        ScenarioArg::S2 => vec![Scenario::S2],
        ScenarioArg::S3 => vec![Scenario::S3],
        ScenarioArg::S4 => vec![Scenario::S4],
        ScenarioArg::All => Scenario::ALL.to_vec(),
    };
    let mut reports: Vec<ScenarioReport> = Vec::new();
    for s in &scenarios {
        for run_seed in seed..seed.saturating_add(runs.max(1)) {
            reports.push(run_scenario(*s, run_seed, clock));
        }
    }
    if let Some(path) = report {
        let jsonl: String = reports.iter().map(ScenarioReport::to_jsonl).collect();
        write_file(path, &jsonl)?;
    }

    let mut text = format!(
        "{:<3}  {:<10}  {:<8}  {:<55}  {}\n",
        "", "runs", "detected", "expected", "observed (first run)"
    );
    let mut rows = Vec::new();
    let mut all_detected = true;
    for s in &scenarios {
        let mine: Vec<_> = reports.iter().filter(|r| r.scenario == *s).collect();
        let detected = mine.iter().filter(|r| r.detected).count();
        all_detected &= detected == mine.len();
        text.push_str(&format!(
            "{:<3}  {:<10}  {:<8}  {:<55}  {}\n",
            s.as_str(),
            mine.len(),
            format!("{detected}/{}", mine.len()),
            s.expected_signal(),
            mine[0].detection_signal
        ));
        let mut row = JsonValue::object();
        row.insert("scenario", s.as_str().into());
        row.insert("title", s.title().into());
        row.insert("expected_signal", s.expected_signal().into());
        row.insert("runs", JsonValue::from(mine.len() as u32));
        row.insert("detected", JsonValue::from(detected as u32));
        row.insert(
            "results",
            JsonValue::Array(mine.iter().map(|r| r.summary_json()).collect()),
        );
        rows.push(row);
    }
    for r in reports.iter().filter(|r| !r.detected) {
        text.push_str(&format!(
            "MISMATCH {} seed {}: {} -> {}\n",
            r.scenario, r.seed, r.variant, r.detection_signal
        ));
    }
    let mut doc = JsonValue::object();
    doc.insert("all_detected", all_detected.into());
    doc.insert("scenarios", JsonValue::Array(rows));
    Ok(Outcome {
        text,
        json: doc,
        code: if all_detected { 0 } else { exit::SIMULATION },
    })
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn bench(hops: usize, iterations: usize, now: u64) -> Result<Outcome> {
    if hops == 0 || iterations == 0 {
        return Err(CliError::new(exit::VALIDATION, "--hops and --iterations must be at least 1"));
    }
    let key = KeyPair::from_seed("bench-issuer", [7u8; 32]);
    let intent: String = "Collect the quarterly figures from the finance workspace and draft a \
                          summary memo for the board; reconcile every number against the ledger \
                          before sharing and flag anything that moved more than five percent."
        .to_owned();
    let mut token = issue(
        &IssueRequest::new(
            Principal::new("bench@example.com", IdType::Email),
            Scope::new(intent, Classification::Confidential),
            "bench-session",
        )
        .at(now),
        &key,
    )
    .map_err(lifecycle_error)?;
    for i in 0..hops {
        let mut req = HopRequest::new(
            format!("agent-{i:03}"),
            "sub-agent",
            format!(
                "Hop {i:03}: fetch the assigned section, verify figures against the ledger, pass it on."
            ),
        );
        req.agent_fingerprint = Some(format!("sha256:{:064x}", i));
        token = extend(&token, &req, &key, now).map_err(lifecycle_error)?;
    }
    let ctx = SessionContext::new([key.public_key()], "bench-session", now)
        .map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?;
    let size = token.canonical_bytes().len();

    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        let r = verify_token(&token, &ctx);
        samples.push(start.elapsed().as_secs_f64() * 1e6);
        if !r.passed {
            return Err(CliError::new(exit::VERIFICATION, r.summary()));
        }
    }
    samples.sort_by(f64::total_cmp);

    let pk = key.public_key();
    let msg = token.canonical_bytes();
    let sig = key.sign(&msg);
    let mut single = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        let ok = pk.verify(&msg, &sig);
        single.push(start.elapsed().as_secs_f64() * 1e6);
        assert!(ok);
    }
    single.sort_by(f64::total_cmp);

    let median = percentile(&samples, 0.5);
    let p99 = percentile(&samples, 0.99);
    let sig_median = percentile(&single, 0.5);
    let num = |x: f64| JsonValue::number((x * 1000.0).round() / 1000.0).expect("finite");
    let mut doc = JsonValue::object();
    doc.insert("hops", JsonValue::from(hops as u32));
    doc.insert("iterations", JsonValue::from(iterations as u32));
    doc.insert("signature_verifications_per_token", JsonValue::from(hops as u32 + 1));
    doc.insert("verify_median_us", num(median));
    doc.insert("verify_p99_us", num(p99));
    doc.insert("ed25519_verify_median_us", num(sig_median));
    doc.insert("token_size_bytes", JsonValue::from(size as u32));
    let text = format!(
        "hops {hops}, {iterations} iterations\n\
         verify median   {median:>10.1} us\n\
         verify p99      {p99:>10.1} us\n\
         ed25519 verify  {sig_median:>10.1} us (median)\n\
         token size      {size:>10} bytes"
    );
    Ok(Outcome::ok(text, doc))
}

fn corpus(action: CorpusAction) -> Result<Outcome> {
    match action {
        CorpusAction::Generate { out } => {
            let files = generate_corpus(&out).map_err(|e| CliError::new(exit::IO, e.to_string()))?;
            let mut doc = JsonValue::object();
            doc.insert(
                "files",
                JsonValue::Array(files.iter().map(|p| p.display().to_string().into()).collect()),
            );
            Ok(Outcome::ok(
                format!("wrote {} cases to {}", files.len(), out.display()),
                doc,
            ))
        }
        CorpusAction::Run { dir } => {
            let results = run_corpus(&dir).map_err(|e| CliError::new(exit::IO, e.to_string()))?;
            let failed = results.iter().filter(|r| !r.passed).count();
            let mut text = String::new();
            let mut rows = Vec::new();
            for r in &results {
                text.push_str(&format!(
                    "{}  {:<32} {} checks\n",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.checks
                ));
                for f in &r.failures {
                    text.push_str(&format!("      {f}\n"));
                }
                let mut row = JsonValue::object();
                row.insert("name", r.name.as_str().into());
                row.insert("passed", r.passed.into());
                row.insert("checks", JsonValue::from(r.checks as u32));
                row.insert(
                    "failures",
                    JsonValue::Array(r.failures.iter().map(|f| f.as_str().into()).collect()),
                );
                rows.push(row);
            }
            text.push_str(&format!("{} cases, {failed} failed", results.len()));
            let mut doc = JsonValue::object();
            doc.insert("passed", (failed == 0).into());
            doc.insert("cases", JsonValue::Array(rows));
            Ok(Outcome {
                text,
                json: doc,
                code: if failed == 0 { 0 } else { exit::VERIFICATION },
            })
        }
    }
}
