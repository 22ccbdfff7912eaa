use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use hdp_core::json::{parse, JsonValue};

const HDP: &str = env!("CARGO_BIN_EXE_hdp");
const T0: &str = "1750000000000";

fn hdp(args: &[&str]) -> Output {
    Command::new(HDP).args(args).output().unwrap()
}

fn hdp_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(HDP)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> JsonValue {
    parse(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Env {
            dir: tempfile::tempdir().unwrap(),
        };
        let out = hdp(&["keygen", "--kid", "issuer-1", "--out", s(&env.key())]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn key(&self) -> PathBuf {
        self.path("issuer.key")
    }

    fn pubkey(&self) -> PathBuf {
        self.path("issuer.pub")
    }

    fn issue(&self, extra: &[&str]) -> Output {
        let key = self.key();
        let mut args = vec![
            "--clock-override", T0, "issue", "--key", s(&key), "--principal-id", "alice@example.com",
            "--id-type", "email", "--intent", "plan the offsite", "--classification", "internal",
            "--session", "sess-1",
        ];
        args.extend_from_slice(extra);
        hdp(&args)
    }

    fn extend(&self, token: &[u8], agent: &str) -> Output {
        let key = self.key();
        hdp_stdin(
            &["--clock-override", T0, "extend", "--key", s(&key), "--agent-id", agent, "--action", "delegate"],
            token,
        )
    }

    fn verify(&self, token: &[u8], session: &str) -> Output {
        let pubkey = self.pubkey();
        hdp_stdin(
            &["--json", "--clock-override", T0, "verify", "--pubkey", s(&pubkey), "--session", session],
            token,
        )
    }
}

#[test]
fn keygen_writes_secret_and_public_files() {
    let env = Env::new();
    let secret = fs::read_to_string(env.key()).unwrap();
    let public = fs::read_to_string(env.pubkey()).unwrap();
    assert!(secret.contains("issuer-1"));
    assert!(public.contains("issuer-1"));
    assert_ne!(secret, public);
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(env.key()).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }
    // Refuses to clobber an existing key.
    let again = hdp(&["keygen", "--kid", "issuer-1", "--out", s(&env.key())]);
    assert_eq!(code(&again), 1);
    assert_eq!(fs::read_to_string(env.key()).unwrap(), secret);
}

#[test]
fn keygen_into_missing_directory_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdp(&["keygen", "--kid", "k", "--out", s(&dir.path().join("no/such/dir/k.key"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn issue_minimal_uses_default_ttl() {
    let env = Env::new();
    let out = env.issue(&[]);
    assert_eq!(code(&out), 0);
    let t = json(&out);
    let header = t.get("header").unwrap();
    let issued = header.get("issued_at").unwrap().as_u64().unwrap();
    let expires = header.get("expires_at").unwrap().as_u64().unwrap();
    assert_eq!(issued, 1_750_000_000_000);
    assert_eq!(expires - issued, 86_400_000);
    assert_eq!(t.get("chain").unwrap().as_array().unwrap().len(), 0);
}

#[test]
fn issue_rejects_bad_fields_naming_them() {
    let env = Env::new();
    let key = env.key();
    let out = hdp(&[
        "issue", "--key", s(&key), "--principal-id", "p", "--intent", "x", "--classification", "secret",
        "--session", "s",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scope.data_classification"));

    let out = hdp(&[
        "--json", "issue", "--key", s(&key), "--principal-id", "", "--intent", "x",
        "--classification", "public", "--session", "s",
    ]);
    assert_eq!(code(&out), 2);
    let doc = json(&out);
    assert!(doc.get("error").unwrap().as_str().unwrap().contains("principal.id"));
    assert_eq!(doc.get("exit_code").unwrap().as_u64(), Some(2));
}

#[test]
fn issue_extend_verify_through_pipes() {
    let env = Env::new();
    let t0 = env.issue(&[]).stdout;
    let t1 = env.extend(&t0, "orchestrator").stdout;
    let t2 = env.extend(&t1, "worker").stdout;
    let out = env.verify(&t2, "sess-1");
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(json(&out).get("passed").unwrap().as_bool(), Some(true));

    let chain = parse(&t2).unwrap();
    let hops = chain.get("chain").unwrap().as_array().unwrap();
    assert_eq!(hops.len(), 2);
    assert_eq!(hops[1].get("parent").unwrap().as_u64(), Some(1));
}

#[test]
fn extend_past_max_hops_is_lifecycle_refusal() {
    let env = Env::new();
    let t0 = env.issue(&["--max-hops", "1"]).stdout;
    let t1 = env.extend(&t0, "a");
    assert_eq!(code(&t1), 0);
    let t2 = env.extend(&t1.stdout, "b");
    assert_eq!(code(&t2), 3);
}

#[test]
fn extend_garbage_is_validation_error() {
    let env = Env::new();
    assert_eq!(code(&env.extend(b"{not json", "a")), 2);
    assert_eq!(code(&env.extend(b"{}", "a")), 2);
}

#[test]
fn extend_expired_token_is_lifecycle_refusal() {
    let env = Env::new();
    let t0 = env.issue(&["--ttl-ms", "10"]).stdout;
    let key = env.key();
    let out = hdp_stdin(
        &["--clock-override", "1750000000010", "extend", "--key", s(&key), "--agent-id", "a", "--action", "x"],
        &t0,
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn verify_reports_session_mismatch_with_exit_4() {
    let env = Env::new();
    let t0 = env.issue(&[]).stdout;
    let out = env.verify(&t0, "sess-2");
    assert_eq!(code(&out), 4);
    let r = json(&out);
    assert_eq!(r.get("failed_step").unwrap().as_u64(), Some(7));
    assert_eq!(r.get("reason").unwrap().as_str(), Some("SessionMismatch"));

    let pubkey = env.pubkey();
    let human = hdp_stdin(
        &["--clock-override", T0, "verify", "--pubkey", s(&pubkey), "--session", "sess-2"],
        &t0,
    );
    assert!(stdout(&human).contains("step 7 SessionMismatch"));
}

#[test]
fn verify_with_wellknown_document() {
    let env = Env::new();
    let public = parse(&fs::read(env.pubkey()).unwrap()).unwrap();
    let doc = format!("{{\"keys\":[{}]}}", public.to_canonical_string());
    let wk = env.path("hdp-keys.json");
    fs::write(&wk, doc).unwrap();
    let t0 = env.issue(&[]).stdout;
    let out = hdp_stdin(
        &["--clock-override", T0, "verify", "--wellknown-file", s(&wk), "--session", "sess-1"],
        &t0,
    );
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_malformed_input_fails_step_1() {
    let env = Env::new();
    let out = env.verify(b"[1,2", "sess-1");
    assert_eq!(code(&out), 4);
    assert_eq!(json(&out).get("reason").unwrap().as_str(), Some("Malformed"));
}

#[test]
fn inspect_shows_chain_table_and_seq_gap_warning() {
    let env = Env::new();
    let mut t = env.issue(&[]).stdout;
    for a in ["a1", "a2", "a3"] {
        t = env.extend(&t, a).stdout;
    }
    let out = hdp_stdin(&["inspect"], &t);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("chain        3 hops"));
    for a in ["a1", "a2", "a3"] {
        assert!(text.contains(a));
    }
    assert!(!text.contains("warning:"));

    let gapped = String::from_utf8(t).unwrap().replace("\"seq\":2", "\"seq\":5");
    let out = hdp_stdin(&["inspect"], gapped.as_bytes());
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("warning: chain.seq"));
    assert!(stdout(&out).contains("Gaps in seq are a protocol violation"));
}

#[test]
fn inspect_unparseable_is_exit_2() {
    assert_eq!(code(&hdp_stdin(&["inspect"], b"nope")), 2);
}

#[test]
fn stripped_record_is_audit_only() {
    let env = Env::new();
    let t0 = env.issue(&["--display-name", "Alice"]).stdout;
    let stripped = hdp_stdin(&["strip"], &t0);
    assert_eq!(code(&stripped), 0);
    assert!(!stdout(&stripped).contains("alice@example.com"));
    let out = hdp_stdin(&["inspect"], &stripped.stdout);
    assert!(stdout(&out).starts_with("audit-only: principal removed"));
    // Never accepted for verification or extension.
    assert_eq!(code(&env.verify(&stripped.stdout, "sess-1")), 4);
    assert_eq!(code(&env.extend(&stripped.stdout, "a")), 2);
}

#[test]
fn lineage_command() {
    let env = Env::new();
    let a = env.path("a.json");
    let b = env.path("b.json");
    let c = env.path("c.json");
    assert_eq!(code(&env.issue(&["--out", s(&a), "--token-id", "00000000-0000-4000-8000-000000000001"])), 0);
    assert_eq!(
        code(&env.issue(&["--out", s(&b), "--parent", "00000000-0000-4000-8000-000000000001"])),
        0
    );
    assert_eq!(code(&env.issue(&["--out", s(&c)])), 0);
    let pubkey = env.pubkey();
    let ok = hdp(&["--clock-override", T0, "lineage", "--pubkey", s(&pubkey), "--session", "sess-1", s(&a), s(&b)]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let broken = hdp(&[
        "--json", "--clock-override", T0, "lineage", "--pubkey", s(&pubkey), "--session", "sess-1", s(&a), s(&c),
    ]);
    assert_eq!(code(&broken), 4);
    assert_eq!(json(&broken).get("failure").unwrap().as_str(), Some("LinkageBroken"));
}

#[test]
fn simulate_all_detects_every_scenario() {
    let out = hdp(&["--json", "simulate", "--scenario", "all", "--runs", "10"]);
    assert_eq!(code(&out), 0);
    let doc = json(&out);
    assert_eq!(doc.get("all_detected").unwrap().as_bool(), Some(true));
    let rows = doc.get("scenarios").unwrap().as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r.get("detected").unwrap().as_u64(), Some(10));
    }
}

#[test]
fn simulate_report_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        assert_eq!(code(&hdp(&["simulate", "--seed", "17", "--report", s(p)])), 0);
    }
    let ra = fs::read(&a).unwrap();
    assert!(!ra.is_empty());
    assert_eq!(ra, fs::read(&b).unwrap());
    for line in String::from_utf8(ra).unwrap().lines() {
        parse(line.as_bytes()).unwrap();
    }
}

#[test]
fn bench_reports_latency_and_size() {
    let one = json(&hdp(&["--json", "bench", "--hops", "1", "--iterations", "20"]));
    let ten = json(&hdp(&["--json", "bench", "--hops", "10", "--iterations", "20"]));
    assert_eq!(one.get("signature_verifications_per_token").unwrap().as_u64(), Some(2));
    let size = |d: &JsonValue| d.get("token_size_bytes").unwrap().as_u64().unwrap();
    assert!(size(&ten) > size(&one));
    for k in ["verify_median_us", "verify_p99_us", "ed25519_verify_median_us"] {
        assert!(ten.get(k).is_some(), "{k}");
    }
    assert_eq!(code(&hdp(&["bench", "--hops", "0"])), 2);
}

#[test]
fn corpus_generate_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdp(&["corpus", "generate", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    let run = hdp(&["--json", "corpus", "run", "--dir", s(dir.path())]);
    assert_eq!(code(&run), 0, "{}", stdout(&run));
    assert_eq!(json(&run).get("passed").unwrap().as_bool(), Some(true));
}

#[test]
fn json_flag_always_yields_one_document() {
    let env = Env::new();
    let t0 = env.path("t.json");
    env.issue(&["--out", s(&t0)]);
    for args in [
        vec!["--json", "inspect", "--token", s(&t0)],
        vec!["--json", "strip", "--token", s(&t0)],
        vec!["--json", "inspect", "--token", "/no/such/file"],
    ] {
        let out = hdp(&args);
        json(&out);
    }
}
