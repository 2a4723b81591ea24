//! Action vocabulary shared by the prompt builder, the parser and the
//! dispatcher.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::status::ProviderRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verb {
    #[serde(rename = "open_camera")]
    OpenCamera,
    #[serde(rename = "close_camera")]
    CloseCamera,
    #[serde(rename = "take_screenshot")]
    TakeScreenshot,
    #[serde(rename = "start_recording")]
    StartRecording,
    #[serde(rename = "stop_recording")]
    StopRecording,
    #[serde(rename = "describe_image")]
    DescribeImage,
    #[serde(rename = "generate_3d_model")]
    Generate3dModel,
    #[serde(rename = "web_search")]
    WebSearch,
    #[serde(rename = "compose_email")]
    ComposeEmail,
    #[serde(rename = "show_answer")]
    ShowAnswer,
    #[serde(rename = "none")]
    None,
}

/// One named string argument of a verb.
#[derive(Debug, Clone, Copy)]
pub struct ArgSpec {
    pub name: &'static str,
    /// Closed set of accepted values, if any.
    pub one_of: Option<&'static [&'static str]>,
    pub hint: &'static str,
}

const fn arg(name: &'static str, hint: &'static str) -> ArgSpec {
    ArgSpec { name, one_of: None, hint }
}

pub const SUBJECT_GENERATED: &str = "generated";
pub const SUBJECT_FILENAME: &str = "filename";

const IMAGE_REF: [ArgSpec; 1] = [arg("image_ref", "id of an image asset, or \"latest\" for the newest screenshot")];
const WEB_SEARCH: [ArgSpec; 1] = [arg("query", "search terms")];
const SHOW_ANSWER: [ArgSpec; 1] = [arg("text", "text to display")];
const COMPOSE_EMAIL: [ArgSpec; 3] = [
    arg("to", "recipient address"),
    ArgSpec {
        name: "subject_source",
        one_of: Some(&[SUBJECT_GENERATED, SUBJECT_FILENAME]),
        hint: "\"generated\" to describe the attachment, \"filename\" to use its file name",
    },
    arg("attachment_ref", "id of the asset to attach"),
];

impl Verb {
    pub const ALL: [Verb; 11] = [
        Verb::OpenCamera,
        Verb::CloseCamera,
        Verb::TakeScreenshot,
        Verb::StartRecording,
        Verb::StopRecording,
        Verb::DescribeImage,
        Verb::Generate3dModel,
        Verb::WebSearch,
        Verb::ComposeEmail,
        Verb::ShowAnswer,
        Verb::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::OpenCamera => "open_camera",
            Verb::CloseCamera => "close_camera",
            Verb::TakeScreenshot => "take_screenshot",
            Verb::StartRecording => "start_recording",
            Verb::StopRecording => "stop_recording",
            Verb::DescribeImage => "describe_image",
            Verb::Generate3dModel => "generate_3d_model",
            Verb::WebSearch => "web_search",
            Verb::ComposeEmail => "compose_email",
            Verb::ShowAnswer => "show_answer",
            Verb::None => "none",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Verb::OpenCamera => "turn on the passthrough camera feed",
            Verb::CloseCamera => "turn off the camera feed",
            Verb::TakeScreenshot => "capture the current camera frame as an image",
            Verb::StartRecording => "record video with microphone and speaker audio",
            Verb::StopRecording => "stop recording and save the video",
            Verb::DescribeImage => "describe what an image shows",
            Verb::Generate3dModel => "build a 3D model from an image",
            Verb::WebSearch => "search the web and show the results",
            Verb::ComposeEmail => "email an asset to someone",
            Verb::ShowAnswer => "display a text answer",
            Verb::None => "do nothing",
        }
    }

    pub fn args(self) -> &'static [ArgSpec] {
        match self {
            Verb::DescribeImage | Verb::Generate3dModel => &IMAGE_REF,
            Verb::WebSearch => &WEB_SEARCH,
            Verb::ComposeEmail => &COMPOSE_EMAIL,
            Verb::ShowAnswer => &SHOW_ANSWER,
            _ => &[],
        }
    }

    /// Provider role the verb cannot run without.
    pub fn primary_role(self) -> Option<ProviderRole> {
        match self {
            Verb::DescribeImage => Some(ProviderRole::Describe),
            Verb::Generate3dModel => Some(ProviderRole::Generate3d),
            Verb::WebSearch => Some(ProviderRole::Search),
            Verb::ComposeEmail => Some(ProviderRole::Email),
            _ => None,
        }
    }

    pub fn is_effectful(self) -> bool {
        self != Verb::None
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verb::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown verb `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub verb: Verb,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl Action {
    pub fn new(verb: Verb) -> Self {
        Self {
            verb,
            args: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }

    pub fn show_answer(text: impl Into<String>) -> Self {
        Self::new(Verb::ShowAnswer).with("text", text)
    }

    /// Checks required arguments and closed value sets.
    pub fn check_args(&self) -> Result<(), String> {
        for spec in self.verb.args() {
            match self.args.get(spec.name).map(|v| v.trim()) {
                None | Some("") => {
                    return Err(format!("{} requires a non-empty `{}` argument", self.verb, spec.name));
                }
                Some(v) => {
                    if let Some(allowed) = spec.one_of {
                        if !allowed.contains(&v) {
                            return Err(format!(
                                "{} argument `{}` must be one of {}, got `{v}`",
                                self.verb,
                                spec.name,
                                allowed.join("|")
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// What the assistant says and does for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub voice: String,
    pub actions: Vec<Action>,
    pub needs_clarification: bool,
}

impl StructuredResponse {
    pub fn speak(voice: impl Into<String>, actions: Vec<Action>) -> Self {
        Self {
            voice: voice.into(),
            actions,
            needs_clarification: false,
        }
    }

    /// Canonical wire form: keys in declaration order, arguments sorted.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    pub fn has_effects(&self) -> bool {
        self.actions.iter().any(|a| a.verb.is_effectful())
    }

    /// Shape rules that hold for every accepted response.
    pub fn check(&self, manifest: &Manifest) -> Result<(), String> {
        if self.voice.trim().is_empty() {
            return Err("`voice` must be a non-empty string".into());
        }
        for action in &self.actions {
            if !manifest.contains(action.verb) {
                return Err(format!("verb `{}` is not in the manifest", action.verb));
            }
            action.check_args()?;
        }
        if self.needs_clarification && self.has_effects() {
            return Err("a clarification request cannot carry actions".into());
        }
        Ok(())
    }
}

/// Verbs offered to the model and accepted back from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    verbs: Vec<Verb>,
}

impl Manifest {
    pub fn standard() -> Self {
        Self {
            verbs: Verb::ALL.to_vec(),
        }
    }

    /// Restricted vocabulary; `none` is always included.
    pub fn only(verbs: &[Verb]) -> Self {
        let mut v: Vec<Verb> = verbs.to_vec();
        if !v.contains(&Verb::None) {
            v.push(Verb::None);
        }
        v.sort();
        v.dedup();
        Self { verbs: v }
    }

    pub fn verbs(&self) -> &[Verb] {
        &self.verbs
    }

    pub fn contains(&self, verb: Verb) -> bool {
        self.verbs.contains(&verb)
    }

    /// Manifest text embedded in the system prompt.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for verb in &self.verbs {
            let args: Vec<String> = verb
                .args()
                .iter()
                .map(|a| match a.one_of {
                    Some(values) => format!("{}={}", a.name, values.join("|")),
                    None => a.name.to_string(),
                })
                .collect();
            out.push_str(&format!("- {}({}): {}.", verb, args.join(", "), verb.summary()));
            for a in verb.args() {
                out.push_str(&format!(" `{}` is the {}.", a.name, a.hint));
            }
            out.push('\n');
        }
        out
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_names_match_display() {
        for v in Verb::ALL {
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
            assert_eq!(v.as_str().parse::<Verb>().unwrap(), v);
        }
    }

    #[test]
    fn compose_email_subject_source_is_closed() {
        let a = Action::new(Verb::ComposeEmail)
            .with("to", "a@b.c")
            .with("subject_source", "random")
            .with("attachment_ref", "shot-1");
        assert!(a.check_args().unwrap_err().contains("generated|filename"));
    }

    #[test]
    fn clarification_cannot_act() {
        let mut r = StructuredResponse::speak("Which one?", vec![Action::new(Verb::OpenCamera)]);
        r.needs_clarification = true;
        assert!(r.check(&Manifest::standard()).is_err());
        r.actions = vec![Action::new(Verb::None)];
        assert!(r.check(&Manifest::standard()).is_ok());
    }

    #[test]
    fn restricted_manifest_keeps_none() {
        let m = Manifest::only(&[Verb::OpenCamera]);
        assert_eq!(m.verbs(), &[Verb::OpenCamera, Verb::None]);
    }
}
