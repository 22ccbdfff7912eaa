use hdp_core::harness::{
    run_honest, run_pipeline, run_scenario, run_semantic_injection, Behavior, EventKind, ForgeryKind,
    PipelineSetup, Scenario, SimulatedAgent, Terminal,
};
use hdp_core::json::parse_str;
use hdp_core::verify::FailureReason;
use hdp_core::KeyPair;

const CLOCK: u64 = 1_750_000_000_000;

#[test]
fn each_scenario_detected_over_100_seeds() {
    for scenario in Scenario::ALL {
        for seed in 0..100 {
            let r = run_scenario(scenario, seed, CLOCK);
            assert!(r.detected, "{scenario} seed {seed}: {} -> {}", r.variant, r.detection_signal);
            match scenario {
                Scenario::S1 => assert_eq!(r.detection_signal, "no token present"),
                Scenario::S2 => assert_eq!(r.failed_step, Some(3)),
                Scenario::S3 => assert!(matches!(r.failed_step, Some(4 | 5))),
                Scenario::S4 => {
                    assert_eq!(r.failed_step, Some(7));
                    assert_eq!(r.reason, Some(FailureReason::SessionMismatch));
                }
            }
        }
    }
}

#[test]
fn honest_pipelines_never_fail() {
    for seed in 0..100 {
        let out = run_honest(seed, CLOCK);
        let Terminal::Executed { report } = &out.terminal else {
            panic!("seed {seed}: {:?}", out.terminal);
        };
        assert!(report.passed);
        let n = out.final_token.as_ref().unwrap().chain.len();
        assert!((1..=20).contains(&n));
    }
}

#[test]
fn misreported_actions_pass_verification() {
    for seed in 0..50 {
        let out = run_semantic_injection(seed, CLOCK);
        assert!(matches!(out.terminal, Terminal::Executed { .. }), "seed {seed}");
    }
}

#[test]
fn transcripts_are_reproducible_json_lines() {
    for scenario in Scenario::ALL {
        let a = run_scenario(scenario, 42, CLOCK).to_jsonl();
        assert_eq!(a, run_scenario(scenario, 42, CLOCK).to_jsonl());
        let lines: Vec<_> = a.lines().collect();
        assert!(lines.len() >= 3);
        for l in lines {
            parse_str(l).unwrap();
        }
    }
}

#[test]
fn forged_token_with_own_kid_is_unknown_kid() {
    let setup = PipelineSetup::new(KeyPair::from_seed("issuer-1", [3u8; 32]), "sess", CLOCK);
    let agents = vec![
        SimulatedAgent::honest("a0", "orchestrator"),
        SimulatedAgent::honest("a1", "sub-agent").with_behavior(Behavior::ForgesToken(ForgeryKind::AttackerKeyOwnKid)),
        SimulatedAgent::honest("a2", "sub-agent"),
    ];
    let out = run_pipeline(&setup, &agents);
    let Terminal::Rejected { at, report } = &out.terminal else { panic!() };
    assert_eq!(at, "a2");
    assert_eq!(report.reason, Some(FailureReason::UnknownKid));
    let kinds: Vec<_> = out.transcript.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [
            EventKind::Issued,
            EventKind::Verified,
            EventKind::Extended,
            EventKind::Verified,
            EventKind::ForgedToken,
            EventKind::Rejected
        ]
    );
}

#[test]
fn replay_is_caught_by_the_next_agent() {
    let setup = PipelineSetup::new(KeyPair::from_seed("issuer-1", [3u8; 32]), "sess", CLOCK);
    let agents = vec![
        SimulatedAgent::honest("a0", "orchestrator").with_behavior(Behavior::ReplaysPriorSession),
        SimulatedAgent::honest("a1", "sub-agent"),
    ];
    let out = run_pipeline(&setup, &agents);
    let Terminal::Rejected { at, report } = &out.terminal else { panic!() };
    assert_eq!(at, "a1");
    assert_eq!(report.failed_step, Some(7));
}
