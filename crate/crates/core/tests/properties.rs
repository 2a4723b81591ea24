//! Property tests for the context stack, the response parser, plan
//! validation, availability tracking and session replay.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use copilot_core::clock::{ManualClock, Timestamp};
use copilot_core::config::ServiceConfig;
use copilot_core::context::{Context, UiState};
use copilot_core::email::SubjectSource;
use copilot_core::events::replay;
use copilot_core::gateway::mock::SAMPLE_FRAME_PNG;
use copilot_core::intent::{
    build_prompt, parse_response, parse_response_with, required_roles, validate_plan, Action, InputModality, Manifest,
    PromptConfig, StructuredResponse, Verb,
};
use copilot_core::runtime::Runtime;
use copilot_core::status::{AvailabilityRecord, SystemStatus, FAILURE_THRESHOLD};
use proptest::prelude::*;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn context_stack_invariants((capacity, ops) in stack_ops()) {
        let r = check_stack_ops(capacity, &ops);
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }

    #[test]
    fn validated_plans_are_sound(response in valid_response(), status in random_status()) {
        let plan = validate_plan(response.clone(), &status);
        if plan.executable {
            for action in &plan.response.actions {
                for role in required_roles(action) {
                    prop_assert!(status.role_available(role), "{} kept without {role}", action.verb);
                }
            }
        }
        if response.needs_clarification {
            prop_assert!(!plan.executable);
            prop_assert!(!plan.response.has_effects());
        }
        prop_assert!(plan.response.check(&Manifest::standard()).is_ok());
    }

    #[test]
    fn availability_follows_the_reference(outcomes in prop::collection::vec(any::<bool>(), 0..40)) {
        let mut rec = AvailabilityRecord::unprobed(Timestamp(0));
        for (i, ok) in outcomes.iter().enumerate() {
            let at = Timestamp(i as u64 + 1);
            if *ok { rec.record_success(at, Duration::from_millis(1)) } else { rec.record_failure(at) }
            prop_assert_eq!(rec.available, reference_available(&outcomes[..=i]), "after {:?}", &outcomes[..=i]);
        }
        let trailing = outcomes.iter().rev().take_while(|ok| !**ok).count() as u32;
        prop_assert_eq!(rec.consecutive_failures, trailing);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4096))]

    #[test]
    fn parser_is_total(bytes in parser_input()) {
        // Either a response obeying every shape rule or a typed error.
        if let Ok(r) = parse_response(&bytes) {
            prop_assert!(r.check(&Manifest::standard()).is_ok());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn responses_round_trip(r in valid_response()) {
        let wire = r.to_json();
        let back = parse_response(wire.as_bytes()).unwrap();
        prop_assert_eq!(back.to_json(), wire);
        prop_assert_eq!(back, r);
    }

    #[test]
    fn manifest_closure(keep in prop::collection::vec(any::<bool>(), Verb::ALL.len())) {
        let chosen: Vec<Verb> = Verb::ALL.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| v).collect();
        let manifest = Manifest::only(&chosen);
        let config = PromptConfig { manifest: manifest.clone(), user_email: None };
        let ctx = Context { ui: UiState::home(), status: SystemStatus::default(), created_at: Timestamp(0), revision: 0 };
        let prompt = build_prompt("hello", &ctx, &config, InputModality::Text).unwrap().system_prompt;
        let listed: BTreeSet<Verb> = prompt
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .filter_map(|l| l.split('(').next())
            .filter_map(|v| v.parse().ok())
            .collect();
        let accepted: BTreeSet<Verb> = Verb::ALL
            .into_iter()
            .filter(|&v| {
                let mut a = Action::new(v);
                for spec in v.args() {
                    a = a.with(spec.name, spec.one_of.map_or("x", |o| o[0]));
                }
                let r = StructuredResponse::speak("ok", vec![a]);
                parse_response_with(r.to_json().as_bytes(), &manifest).is_ok()
            })
            .collect();
        prop_assert_eq!(&listed, &accepted);
        prop_assert_eq!(listed, manifest.verbs().iter().copied().collect::<BTreeSet<_>>());
    }
}

const PHRASES: [&str; 16] = [
    "what can you do",
    "open the camera",
    "take a screenshot",
    "take a screenshot and describe it",
    "describe it",
    "turn this into a 3d model",
    "email it to friend@example.com",
    "search for soldering",
    "go back",
    "close the camera",
    "start recording",
    "stop recording",
    "hello there",
    "what is the weather like?",
    "never mind",
    "show me",
];

#[derive(Debug, Clone)]
enum Step {
    Say(usize),
    Frame,
    Toggle(usize, bool),
}

fn steps() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(
        prop_oneof![
            6 => (0..PHRASES.len()).prop_map(Step::Say),
            2 => Just(Step::Frame),
            1 => (0usize..4, any::<bool>()).prop_map(|(i, up)| Step::Toggle(i, up)),
        ],
        1..24,
    )
}

const TOGGLED: [&str; 4] = ["mock-describe", "mock-generate_3d", "mock-search", "mock-segment"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Replaying any prefix of the log rebuilds the state recorded at that
    /// point; seqs are dense and assets are only ever appended.
    #[test]
    fn sessions_replay_at_every_seq(steps in steps()) {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ServiceConfig { data_dir: dir.path().to_path_buf(), ..ServiceConfig::default() };
        config.force_mocks();
        let rt = Runtime::new(config, Arc::new(ManualClock::new(1000, 5))).unwrap().with_snapshot_trail();
        let id = rt.create_session().unwrap().id;
        let mut assets_seen = Vec::new();
        for step in &steps {
            match step {
                Step::Say(i) => { let _ = rt.submit_text(&id, PHRASES[*i]); }
                Step::Frame => { let _ = rt.post_frame(&id, &SAMPLE_FRAME_PNG); }
                Step::Toggle(i, up) => {
                    rt.mocks().switch(TOGGLED[*i]).unwrap().set_up(*up);
                    for _ in 0..FAILURE_THRESHOLD { rt.probe(TOGGLED[*i]).unwrap(); }
                }
            }
            let state = rt.session_state(&id).unwrap();
            prop_assert!(state.assets.starts_with(&assets_seen), "assets were rewritten");
            for a in &state.assets {
                let bytes = rt.store().read(a).unwrap();
                prop_assert_eq!(copilot_core::assets::sha256_hex(&bytes), a.sha256.clone());
            }
            assets_seen = state.assets.clone();
        }
        let events = rt.events(&id).unwrap();
        let trail = rt.snapshot_trail(&id).unwrap().unwrap();
        prop_assert_eq!(events.len(), trail.len());
        for (i, e) in events.iter().enumerate() {
            prop_assert_eq!(e.seq, i as u64);
            let rebuilt = replay(&id, &events[..=i]).unwrap();
            prop_assert!(rebuilt == trail[i], "replay diverges at seq {}", i);
        }
        prop_assert!(replay(&id, &events).unwrap() == rt.session_state(&id).unwrap());
    }

    /// The subject is generated exactly when describe was up at draft time.
    #[test]
    fn email_subject_source_tracks_describe(describe_up in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ServiceConfig { data_dir: dir.path().to_path_buf(), ..ServiceConfig::default() };
        config.force_mocks();
        let rt = Runtime::new(config, Arc::new(ManualClock::new(1000, 5))).unwrap();
        let id = rt.create_session().unwrap().id;
        rt.submit_text(&id, "open the camera").unwrap();
        rt.post_frame(&id, &SAMPLE_FRAME_PNG).unwrap();
        rt.submit_text(&id, "take a screenshot").unwrap();
        rt.mocks().switch("mock-describe").unwrap().set_up(describe_up);
        for _ in 0..FAILURE_THRESHOLD { rt.probe("mock-describe").unwrap(); }
        rt.submit_text(&id, "email it to friend@example.com").unwrap();
        let state = rt.session_state(&id).unwrap();
        let email = state.assets.iter().rev().find(|a| a.id.starts_with("email-")).expect("email asset");
        let record: serde_json::Value = serde_json::from_slice(&rt.store().read(email).unwrap()).unwrap();
        let source: SubjectSource = serde_json::from_value(record["draft"]["subject_source"].clone()).unwrap();
        prop_assert_eq!(source == SubjectSource::Generated, describe_up);
        let subject = record["draft"]["subject"].as_str().unwrap();
        if describe_up {
            prop_assert_eq!(subject, "An image of shot-1.");
        } else {
            prop_assert_eq!(subject, "shot-1.png");
        }
    }
}
