//! Checks a parsed response against service availability and rewrites
//! actions that cannot run.

use serde::{Deserialize, Serialize};

use super::verbs::{Action, StructuredResponse, Verb, SUBJECT_FILENAME, SUBJECT_GENERATED};
use super::IntentError;
use crate::status::{ProviderRole, SystemStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub index: usize,
    pub original: Action,
    pub replacement: Action,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedPlan {
    pub response: StructuredResponse,
    pub substitutions: Vec<Substitution>,
    pub executable: bool,
}

impl ValidatedPlan {
    pub fn substitution_at(&self, index: usize) -> Option<&Substitution> {
        self.substitutions.iter().find(|s| s.index == index)
    }
}

/// Roles an action needs at execution time.
pub fn required_roles(action: &Action) -> Vec<ProviderRole> {
    let mut roles: Vec<ProviderRole> = action.verb.primary_role().into_iter().collect();
    if action.verb == Verb::ComposeEmail && action.arg("subject_source") == Some(SUBJECT_GENERATED) {
        roles.push(ProviderRole::Describe);
    }
    roles
}

pub fn unavailable_message(role: ProviderRole) -> String {
    format!("{} is unavailable right now.", role.capability())
}

/// Replaces actions whose services are down. A generated email subject
/// falls back to the file name when only the describe service is down;
/// every other missing service turns the action into a spoken explanation.
pub fn validate_plan(response: StructuredResponse, status: &SystemStatus) -> ValidatedPlan {
    if response.needs_clarification {
        return ValidatedPlan {
            response,
            substitutions: Vec::new(),
            executable: false,
        };
    }
    let mut response = response;
    let mut substitutions = Vec::new();
    let mut explanations = Vec::new();
    for (index, action) in response.actions.iter_mut().enumerate() {
        let Some(primary) = action.verb.primary_role() else {
            continue;
        };
        let replacement = if !status.role_available(primary) {
            let text = unavailable_message(primary);
            explanations.push(text.clone());
            Some((Action::show_answer(text), format!("{primary} service unavailable")))
        } else if action.verb == Verb::ComposeEmail
            && action.arg("subject_source") == Some(SUBJECT_GENERATED)
            && !status.role_available(ProviderRole::Describe)
        {
            let downgraded = action.clone().with("subject_source", SUBJECT_FILENAME);
            Some((downgraded, "describe service unavailable; subject uses the file name".to_string()))
        } else {
            None
        };
        if let Some((replacement, reason)) = replacement {
            substitutions.push(Substitution {
                index,
                original: std::mem::replace(action, replacement.clone()),
                replacement,
                reason,
            });
        }
    }
    if !explanations.is_empty() {
        explanations.dedup();
        response.voice = explanations.join(" ");
    }
    ValidatedPlan {
        response,
        substitutions,
        executable: true,
    }
}

/// Response asking the user to clarify. Reasons of the form
/// `ambiguous referent: which image` become a direct question.
pub fn clarification_response(reason: &str) -> Result<StructuredResponse, IntentError> {
    let reason = reason.trim();
    if reason.is_empty() {
        return Err(IntentError::EmptyReason);
    }
    let voice = match reason.strip_prefix("ambiguous referent:").map(str::trim) {
        Some(which) if !which.is_empty() => format!("Sorry, {which} do you mean?"),
        _ => format!("Sorry, I could not act on that ({reason}). Could you rephrase it?"),
    };
    Ok(StructuredResponse {
        voice,
        actions: Vec::new(),
        needs_clarification: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::status::{AvailabilityRecord, ServiceStatus};

    fn status(up: &[ProviderRole]) -> SystemStatus {
        let mut s = SystemStatus::default();
        for role in ProviderRole::ALL {
            let mut record = AvailabilityRecord::unprobed(Timestamp(0));
            record.available = up.contains(&role);
            s.services.insert(format!("mock-{role}"), ServiceStatus { role, record });
        }
        s
    }

    fn email(source: &str) -> Action {
        Action::new(Verb::ComposeEmail)
            .with("to", "me@example.com")
            .with("subject_source", source)
            .with("attachment_ref", "shot-1")
    }

    #[test]
    fn subject_falls_back_to_filename() {
        let r = StructuredResponse::speak("Emailing it.", vec![email(SUBJECT_GENERATED)]);
        let plan = validate_plan(r, &status(&[ProviderRole::Email]));
        assert!(plan.executable);
        assert_eq!(plan.response.actions[0], email(SUBJECT_FILENAME));
        assert_eq!(plan.substitutions.len(), 1);
        assert_eq!(plan.response.voice, "Emailing it.");
    }

    #[test]
    fn missing_service_becomes_answer() {
        let r = StructuredResponse::speak(
            "Building it.",
            vec![Action::new(Verb::Generate3dModel).with("image_ref", "shot-1")],
        );
        let plan = validate_plan(r, &status(&[]));
        assert_eq!(plan.response.actions[0].verb, Verb::ShowAnswer);
        assert_eq!(plan.response.voice, "3D model generation is unavailable right now.");
    }

    #[test]
    fn every_kept_action_has_its_services() {
        let r = StructuredResponse::speak(
            "ok",
            vec![
                Action::new(Verb::DescribeImage).with("image_ref", "latest"),
                email(SUBJECT_GENERATED),
                Action::new(Verb::OpenCamera),
            ],
        );
        let s = status(&[ProviderRole::Describe]);
        let plan = validate_plan(r, &s);
        for a in &plan.response.actions {
            assert!(required_roles(a).into_iter().all(|role| s.role_available(role)));
        }
    }

    #[test]
    fn clarification_is_not_executable() {
        let r = clarification_response("ambiguous referent: which image").unwrap();
        assert_eq!(r.voice, "Sorry, which image do you mean?");
        assert!(!validate_plan(r, &status(&[])).executable);
        assert_eq!(clarification_response("  "), Err(IntentError::EmptyReason));
        assert!(clarification_response("intent not recognized")
            .unwrap()
            .voice
            .contains("intent not recognized"));
    }
}
