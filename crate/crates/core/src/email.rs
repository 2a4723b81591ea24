//! Email drafts, RFC 822 rendering and the dry-run outbox transport.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::assets::{sha256_hex, AssetRef};
use crate::gateway::mock::MockSwitch;
use crate::gateway::{CallError, Delivery, MailTransport, Provider};

pub const SUBJECT_LIMIT: usize = 78;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectSource {
    Generated,
    Filename,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailDraft {
    pub from: String,
    pub to: String,
    pub subject: String,
    pub subject_source: SubjectSource,
    pub body: String,
    pub attachment: AssetRef,
}

/// Cuts `text` to at most `limit` characters on a character boundary.
pub fn truncate_chars(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

/// Builds a draft for an asset. A description, when present, becomes the
/// subject; otherwise the attachment's file name is used.
pub fn draft_for_asset(from: &str, to: &str, attachment: &AssetRef, description: Option<&str>) -> EmailDraft {
    let (subject, subject_source, body) = match description.map(str::trim).filter(|d| !d.is_empty()) {
        Some(d) => (
            truncate_chars(d, SUBJECT_LIMIT).trim_end().to_string(),
            SubjectSource::Generated,
            format!("{d}\n\nAttached: {}\n", attachment.filename),
        ),
        None => (
            truncate_chars(&attachment.filename, SUBJECT_LIMIT).to_string(),
            SubjectSource::Filename,
            format!("Attached: {}\n", attachment.filename),
        ),
    };
    EmailDraft {
        from: from.to_string(),
        to: to.to_string(),
        subject,
        subject_source,
        body,
        attachment: attachment.clone(),
    }
}

fn encode_header(value: &str) -> String {
    let clean: String = value.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    if clean.is_ascii() {
        clean
    } else {
        format!("=?UTF-8?B?{}?=", STANDARD.encode(clean.as_bytes()))
    }
}

fn quote_param(value: &str) -> String {
    value.chars().filter(|c| !c.is_control() && *c != '"' && *c != '\\').collect()
}

fn wrap_base64(bytes: &[u8]) -> String {
    let encoded = STANDARD.encode(bytes);
    let mut out = String::with_capacity(encoded.len() + encoded.len() / 76 * 2 + 2);
    for line in encoded.as_bytes().chunks(76) {
        out.push_str(std::str::from_utf8(line).expect("base64 is ASCII"));
        out.push_str("\r\n");
    }
    out
}

/// Renders a multipart/mixed message with a text part and the attachment
/// as base64.
pub fn render_message(draft: &EmailDraft, attachment_bytes: &[u8]) -> Vec<u8> {
    let boundary = format!("copilot-{}", &draft.attachment.sha256.get(..16).unwrap_or("boundary"));
    let body_text = draft.body.replace("\r\n", "\n").replace('\n', "\r\n");
    let digest = sha256_hex(format!("{}|{}|{}", draft.to, draft.subject, draft.attachment.sha256).as_bytes());
    let mut m = String::new();
    m.push_str(&format!("From: {}\r\n", encode_header(&draft.from)));
    m.push_str(&format!("To: {}\r\n", encode_header(&draft.to)));
    m.push_str(&format!("Subject: {}\r\n", encode_header(&draft.subject)));
    m.push_str(&format!("Message-ID: <{}@copilot.local>\r\n", &digest[..24]));
    m.push_str("MIME-Version: 1.0\r\n");
    m.push_str(&format!("Content-Type: multipart/mixed; boundary=\"{boundary}\"\r\n\r\n"));
    m.push_str(&format!("--{boundary}\r\n"));
    m.push_str("Content-Type: text/plain; charset=utf-8\r\n");
    m.push_str("Content-Transfer-Encoding: base64\r\n\r\n");
    m.push_str(&wrap_base64(body_text.as_bytes()));
    m.push_str(&format!("--{boundary}\r\n"));
    let name = quote_param(&draft.attachment.filename);
    m.push_str(&format!("Content-Type: {}; name=\"{name}\"\r\n", draft.attachment.mime()));
    m.push_str(&format!("Content-Disposition: attachment; filename=\"{name}\"\r\n"));
    m.push_str("Content-Transfer-Encoding: base64\r\n\r\n");
    m.push_str(&wrap_base64(attachment_bytes));
    m.push_str(&format!("--{boundary}--\r\n"));
    m.into_bytes()
}

/// A decoded MIME part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePart {
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl MessagePart {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// `filename` parameter of the Content-Disposition header.
    pub fn filename(&self) -> Option<&str> {
        let disp = self.header("Content-Disposition")?;
        let start = disp.find("filename=\"")? + "filename=\"".len();
        let end = disp[start..].find('"')? + start;
        Some(&disp[start..end])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedMessage {
    pub headers: Vec<(String, String)>,
    pub parts: Vec<MessagePart>,
}

impl ParsedMessage {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Subject with RFC 2047 base64 words decoded.
    pub fn subject(&self) -> Option<String> {
        let raw = self.header("Subject")?;
        match raw.strip_prefix("=?UTF-8?B?").and_then(|r| r.strip_suffix("?=")) {
            Some(b64) => STANDARD
                .decode(b64)
                .ok()
                .and_then(|b| String::from_utf8(b).ok()),
            None => Some(raw.to_string()),
        }
    }

    pub fn attachments(&self) -> impl Iterator<Item = &MessagePart> {
        self.parts.iter().filter(|p| p.filename().is_some())
    }
}

fn split_head(text: &str) -> (Vec<(String, String)>, &str) {
    let (head, body) = match text.find("\r\n\r\n") {
        Some(i) => (&text[..i], &text[i + 4..]),
        None => (text, ""),
    };
    let mut headers: Vec<(String, String)> = Vec::new();
    for line in head.split("\r\n") {
        if line.starts_with([' ', '\t']) {
            if let Some(last) = headers.last_mut() {
                last.1.push(' ');
                last.1.push_str(line.trim());
            }
        } else if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    (headers, body)
}

/// Reads back a message produced by [`render_message`].
pub fn read_message(bytes: &[u8]) -> Result<ParsedMessage, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let (headers, body) = split_head(text);
    let content_type = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("Content-Type"))
        .map(|(_, v)| v.as_str())
        .ok_or("missing Content-Type")?;
    let start = content_type.find("boundary=\"").ok_or("missing boundary")? + "boundary=\"".len();
    let end = content_type[start..].find('"').ok_or("unterminated boundary")? + start;
    let delimiter = format!("--{}", &content_type[start..end]);
    let mut parts = Vec::new();
    let mut sections = body.split(delimiter.as_str());
    sections.next();
    for section in sections {
        if section.starts_with("--") {
            break;
        }
        let section = section.strip_prefix("\r\n").unwrap_or(section);
        let (headers, raw) = split_head(section);
        let part = MessagePart {
            headers,
            body: Vec::new(),
        };
        let encoded = part
            .header("Content-Transfer-Encoding")
            .is_some_and(|v| v.eq_ignore_ascii_case("base64"));
        let body = if encoded {
            let compact: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
            STANDARD.decode(compact).map_err(|e| e.to_string())?
        } else {
            raw.trim_end_matches("\r\n").as_bytes().to_vec()
        };
        parts.push(MessagePart { body, ..part });
    }
    Ok(ParsedMessage { headers, parts })
}

/// Writes messages as `.eml` files instead of sending them.
pub struct DryRunOutbox {
    dir: PathBuf,
    switch: MockSwitch,
}

impl DryRunOutbox {
    pub fn new(dir: impl Into<PathBuf>, switch: MockSwitch) -> Self {
        Self {
            dir: dir.into(),
            switch,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Outbox files in send order.
pub fn outbox_messages(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "eml"))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

impl Provider for DryRunOutbox {
    fn health_check(&self) -> Result<(), CallError> {
        self.switch.check()?;
        fs::create_dir_all(&self.dir).map_err(|e| CallError::Unreachable(e.to_string()))
    }
}

impl MailTransport for DryRunOutbox {
    fn send(&self, message: &[u8]) -> Result<Delivery, CallError> {
        self.switch.check()?;
        fs::create_dir_all(&self.dir).map_err(|e| CallError::Unreachable(e.to_string()))?;
        let n = outbox_messages(&self.dir).len() + 1;
        let name = format!("{n:05}-{}.eml", &sha256_hex(message)[..12]);
        let dest = self.dir.join(&name);
        let staging = self.dir.join(format!(".{name}.part"));
        fs::write(&staging, message)
            .and_then(|_| fs::rename(&staging, &dest))
            .map_err(|e| CallError::Unreachable(e.to_string()))?;
        Ok(Delivery {
            transport: "dry_run".into(),
            location: dest.display().to_string(),
        })
    }
}
