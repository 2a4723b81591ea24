//! Intent protocol: prompt assembly, response parsing with repair, plan
//! validation against service availability, and relevance gating.

mod parse;
mod plan;
mod prompt;
pub mod relevance;
mod verbs;

use thiserror::Error;

pub use parse::{parse_response, parse_response_with, ParseError, Repair};
pub use plan::{clarification_response, required_roles, unavailable_message, validate_plan, Substitution, ValidatedPlan};
pub use prompt::{build_prompt, InputModality, PromptConfig, PromptEnvelope, CONTEXT_HEADER};
pub use relevance::{classify_relevance, RelevanceBackend, RuleRelevance};
pub use verbs::{Action, ArgSpec, Manifest, StructuredResponse, Verb, SUBJECT_FILENAME, SUBJECT_GENERATED};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("input is empty")]
    EmptyInput,
    #[error("clarification reason is empty")]
    EmptyReason,
}
