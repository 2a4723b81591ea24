//! Prompt assembly for the intent model.

use serde::{Deserialize, Serialize};

use super::verbs::Manifest;
use super::IntentError;
use crate::context::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputModality {
    Text,
    Voice,
}

/// Everything sent to the intent model for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEnvelope {
    pub system_prompt: String,
    pub user_input: String,
    pub context_block: String,
    pub input_modality: InputModality,
}

impl PromptEnvelope {
    /// Recovers the context the prompt was built from.
    pub fn context(&self) -> Result<Context, serde_json::Error> {
        serde_json::from_str(&self.context_block)
    }
}

/// Static parts of the system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptConfig {
    pub manifest: Manifest,
    pub user_email: Option<String>,
}

pub const CONTEXT_HEADER: &str = "Current context (JSON):";

pub fn build_prompt(
    user_input: &str,
    context: &Context,
    config: &PromptConfig,
    modality: InputModality,
) -> Result<PromptEnvelope, IntentError> {
    let input = user_input.trim();
    if input.is_empty() {
        return Err(IntentError::EmptyInput);
    }
    let context_block = serde_json::to_string(context).expect("context serializes");
    let mut system = String::from(
        "You are the assistant of a mixed-reality headset. Answer every request with exactly one JSON object and no other text:\n\
         {\"voice\": \"<sentence spoken to the user>\", \"actions\": [{\"verb\": \"<verb>\", \"args\": {\"<name>\": \"<string value>\"}}], \"needs_clarification\": false}\n\n\
         Verbs you may use:\n",
    );
    system.push_str(&config.manifest.describe());
    system.push_str(
        "\nRules:\n\
         - Use only the verbs listed above. All argument values are strings.\n\
         - Refer to images, models and other assets by the ids that appear in the context.\n\
         - When the request is ambiguous, set needs_clarification to true, leave actions empty and ask a short question in voice.\n\
         - Do not plan an action whose service is marked unavailable in the context; say that it is unavailable instead.\n\
         - Keep voice to one or two short sentences.\n",
    );
    if let Some(email) = &config.user_email {
        system.push_str(&format!("- The user's own email address is {email}.\n"));
    }
    if modality == InputModality::Voice {
        system.push_str("- The request was transcribed from speech and may contain recognition errors.\n");
    }
    system.push('\n');
    system.push_str(CONTEXT_HEADER);
    system.push('\n');
    system.push_str(&context_block);
    Ok(PromptEnvelope {
        system_prompt: system,
        user_input: input.to_string(),
        context_block,
        input_modality: modality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::context::ContextStack;
    use crate::intent::verbs::Verb;
    use crate::status::SystemStatus;

    fn home() -> Context {
        ContextStack::init(4, SystemStatus::default(), Timestamp(3)).unwrap().peek().clone()
    }

    #[test]
    fn lists_every_verb_and_the_context() {
        let env = build_prompt("open the camera", &home(), &PromptConfig::default(), InputModality::Text).unwrap();
        for v in Verb::ALL {
            assert!(env.system_prompt.contains(&format!("- {v}(")), "missing {v}");
        }
        assert!(env.system_prompt.ends_with(&env.context_block));
        assert_eq!(env.context().unwrap(), home());
    }

    #[test]
    fn blank_input_is_rejected() {
        assert_eq!(
            build_prompt(" \t", &home(), &PromptConfig::default(), InputModality::Text),
            Err(IntentError::EmptyInput)
        );
    }

    #[test]
    fn user_email_is_mentioned() {
        let cfg = PromptConfig {
            user_email: Some("me@example.com".into()),
            ..PromptConfig::default()
        };
        let env = build_prompt("hi", &home(), &cfg, InputModality::Voice).unwrap();
        assert!(env.system_prompt.contains("me@example.com"));
        assert_eq!(env.input_modality, InputModality::Voice);
    }
}
