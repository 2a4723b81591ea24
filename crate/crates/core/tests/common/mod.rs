//! Generators and reference models shared by the core integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use copilot_core::clock::Timestamp;
use copilot_core::context::{ContextStack, RelevanceVerdict, UiKind, UiState};
use copilot_core::intent::{Action, StructuredResponse, Verb, SUBJECT_FILENAME, SUBJECT_GENERATED};
use copilot_core::status::{AvailabilityRecord, ProviderRole, ServiceStatus, SystemStatus};
use proptest::prelude::*;

// ---------------------------------------------------------------- context

#[derive(Debug, Clone)]
pub enum StackOp {
    Push(UiState),
    Gate(RelevanceVerdict),
}

pub fn ui_state() -> impl Strategy<Value = UiState> {
    (prop::sample::select(UiKind::ALL.to_vec()), "[a-z]{1,6}-[0-9]{1,2}", "[ -~]{0,20}").prop_map(|(kind, id, summary)| {
        if kind == UiKind::Home {
            UiState::home()
        } else if kind.requires_payload() {
            UiState::showing(kind, id, summary).unwrap()
        } else {
            UiState::plain(kind, summary).unwrap()
        }
    })
}

pub fn verdict() -> impl Strategy<Value = RelevanceVerdict> {
    prop_oneof![
        any::<bool>().prop_map(|r| RelevanceVerdict::model(r, "model")),
        any::<bool>().prop_map(|r| RelevanceVerdict::rule(r, "rule")),
        Just(RelevanceVerdict::forced("go back")),
    ]
}

pub fn stack_ops() -> impl Strategy<Value = (usize, Vec<StackOp>)> {
    (
        2usize..=8,
        prop::collection::vec(
            prop_oneof![ui_state().prop_map(StackOp::Push), verdict().prop_map(StackOp::Gate)],
            0..80,
        ),
    )
}

/// Applies `ops` to a fresh stack and checks depth bounds, base
/// preservation, revision order, irrelevance as a no-op and pop/push
/// duality after every step, plus agreement with a plain list model.
pub fn check_stack_ops(capacity: usize, ops: &[StackOp]) -> Result<(), String> {
    let mut stack = ContextStack::init(capacity, SystemStatus::default(), Timestamp(0)).map_err(|e| e.to_string())?;
    let base = stack.base().clone();
    // Reference: (ui, revision) bottom to top, plus the highest revision issued.
    let mut model: Vec<(UiState, u64)> = vec![(UiState::home(), 0)];
    let mut issued = 0u64;
    let mut popped_from: Option<usize> = None;

    for (step, op) in ops.iter().enumerate() {
        let before = serde_json::to_vec(&stack).unwrap();
        let depth_before = stack.depth();
        match op {
            StackOp::Gate(v) => {
                let got = stack.gate_and_pop(v);
                let pops = v.relevant || v.source == copilot_core::context::VerdictSource::Forced;
                if !pops {
                    if got.is_some() || serde_json::to_vec(&stack).unwrap() != before {
                        return Err(format!("step {step}: irrelevant verdict changed the stack"));
                    }
                    popped_from = None;
                } else {
                    let want = if model.len() == 1 { model[0].clone() } else { model.pop().unwrap() };
                    let got = got.ok_or(format!("step {step}: relevant verdict returned nothing"))?;
                    if (got.ui.clone(), got.revision) != want {
                        return Err(format!("step {step}: popped {:?}, want {:?}", got.ui, want));
                    }
                    popped_from = (depth_before > 1).then_some(depth_before);
                }
            }
            StackOp::Push(ui) => {
                let evicts = model.len() == capacity;
                stack.push_outcome(ui.clone(), SystemStatus::default(), Timestamp(step as u64 + 1));
                if evicts {
                    model.remove(1);
                }
                issued += 1;
                model.push((ui.clone(), issued));
                if let Some(d) = popped_from.take() {
                    if !evicts && stack.depth() != d {
                        return Err(format!("step {step}: pop then push left depth {} not {d}", stack.depth()));
                    }
                }
            }
        }
        let depth = stack.depth();
        if !(1..=capacity).contains(&depth) {
            return Err(format!("step {step}: depth {depth} outside 1..={capacity}"));
        }
        if *stack.base() != base {
            return Err(format!("step {step}: base frame changed"));
        }
        if stack.frames().windows(2).any(|w| w[0].revision >= w[1].revision) {
            return Err(format!("step {step}: revisions not strictly increasing"));
        }
        let shape: Vec<(UiState, u64)> = stack.frames().iter().map(|c| (c.ui.clone(), c.revision)).collect();
        if shape != model {
            return Err(format!("step {step}: stack differs from the reference list"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- responses

fn arg_value() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z0-9 ._@-]{1,24}", "\\PC{1,12}"].prop_filter("non-blank", |s: &String| !s.trim().is_empty())
}

pub fn action() -> impl Strategy<Value = Action> {
    (prop::sample::select(Verb::ALL.to_vec()), prop::collection::vec(arg_value(), 3), any::<bool>()).prop_map(
        |(verb, values, generated)| {
            let mut a = Action::new(verb);
            for (spec, value) in verb.args().iter().zip(values) {
                let v = match spec.one_of {
                    Some(_) if generated => SUBJECT_GENERATED.to_string(),
                    Some(_) => SUBJECT_FILENAME.to_string(),
                    None => value.trim().to_string(),
                };
                a = a.with(spec.name, v);
            }
            a
        },
    )
}

/// Responses that satisfy every shape rule.
pub fn valid_response() -> impl Strategy<Value = StructuredResponse> {
    (
        "\\PC{1,60}".prop_filter("non-blank", |s: &String| !s.trim().is_empty()),
        prop::collection::vec(action(), 0..5),
        any::<bool>(),
    )
        .prop_map(|(voice, actions, clarify)| {
            if clarify {
                StructuredResponse {
                    voice,
                    actions: vec![],
                    needs_clarification: true,
                }
            } else {
                StructuredResponse::speak(voice, actions)
            }
        })
}

/// Byte strings for the parser: noise, plus valid replies that were
/// wrapped, truncated or had bytes flipped.
pub fn parser_input() -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![
        prop::collection::vec(any::<u8>(), 0..256),
        "\\PC{0,80}".prop_map(String::into_bytes),
        (valid_response(), 0usize..4).prop_map(|(r, wrap)| {
            let json = r.to_json();
            match wrap {
                0 => json,
                1 => format!("```json\n{json}\n```"),
                2 => format!("Sure! Here you go: {json} Hope that helps."),
                _ => format!("{json}{json}"),
            }
            .into_bytes()
        }),
        (valid_response(), any::<prop::sample::Index>(), any::<u8>()).prop_map(|(r, at, b)| {
            let mut bytes = r.to_json().into_bytes();
            let i = at.index(bytes.len());
            bytes[i] = b;
            bytes
        }),
        (valid_response(), any::<prop::sample::Index>()).prop_map(|(r, at)| {
            let bytes = r.to_json().into_bytes();
            let cut = at.index(bytes.len());
            bytes[..cut].to_vec()
        }),
    ]
}

// ---------------------------------------------------------------- availability

/// Reference availability after a run of probe outcomes: available iff some
/// probe succeeded and fewer than three failures follow the last success.
pub fn reference_available(outcomes: &[bool]) -> bool {
    match outcomes.iter().rposition(|ok| *ok) {
        None => false,
        Some(last) => outcomes.len() - last - 1 < 3,
    }
}

pub fn status_with(up: &[(ProviderRole, bool)]) -> SystemStatus {
    let services: BTreeMap<String, ServiceStatus> = up
        .iter()
        .map(|&(role, available)| {
            let mut record = AvailabilityRecord::unprobed(Timestamp(0));
            record.available = available;
            (format!("p-{role}"), ServiceStatus { role, record })
        })
        .collect();
    SystemStatus {
        network_ok: true,
        services,
    }
}

pub fn random_status() -> impl Strategy<Value = SystemStatus> {
    prop::collection::vec(any::<bool>(), ProviderRole::ALL.len()).prop_map(|flags| {
        let pairs: Vec<(ProviderRole, bool)> = ProviderRole::ALL.into_iter().zip(flags).collect();
        status_with(&pairs)
    })
}
