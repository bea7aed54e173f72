//! Versioned prompt templates.
//!
//! Templates are ChatML-style text with `{slot}` placeholders. Each one is
//! pinned by the SHA-256 of its bytes (trailing newline included); loading a
//! template whose hash differs from the configured one is refused.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{sha256_hex, Message, Role};

pub const VERIFICATION_V1: &str = include_str!("../templates/verification.v1.txt");
pub const VERIFICATION_V1_SHA256: &str =
    "4d0ff631f8a6de79c82e769f60a3dcb033fff09bab97d957ca731d6201c469bf";
pub const REASONER_V1: &str = include_str!("../templates/reasoner.v1.txt");
pub const REASONER_V1_SHA256: &str =
    "7dde1b8261bf8cad279978547ec593fe0413baa7bbe60dcd86e4dc41676d4555";
pub const TEACHER_V1: &str = include_str!("../templates/teacher.v1.txt");
pub const TEACHER_V1_SHA256: &str =
    "d7db77646978e562823e7f4bf1dff3676742491140aa49fc2496f196bc3caacf";
pub const JUDGE_V1: &str = include_str!("../templates/judge.v1.txt");
pub const JUDGE_V1_SHA256: &str =
    "7c405653c72facede6bc12e114aca985e1024b75cf01a8dda89426c5ebfb9aaa";

const TURN_START: &str = "<|im_start|>";
const TURN_END: &str = "<|im_end|>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {name}: hash {actual} does not match configured {expected}")]
    HashMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("template {name}: no value for slot `{slot}`")]
    MissingSlot { name: String, slot: String },
    #[error("template {name}: malformed turn structure: {detail}")]
    Structure { name: String, detail: String },
    #[error("template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    text: String,
    sha256: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let sha256 = sha256_hex(text.as_bytes());
        PromptTemplate {
            name: name.into(),
            text,
            sha256,
        }
    }

    pub fn verification_v1() -> Self {
        Self::new("verification.v1", VERIFICATION_V1)
    }

    pub fn reasoner_v1() -> Self {
        Self::new("reasoner.v1", REASONER_V1)
    }

    pub fn teacher_v1() -> Self {
        Self::new("teacher.v1", TEACHER_V1)
    }

    pub fn judge_v1() -> Self {
        Self::new("judge.v1", JUDGE_V1)
    }

    /// Reads a template file and checks it against `expected_sha256`.
    pub fn load(path: &Path, expected_sha256: &str) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let template = Self::new(name, text);
        template.verify(expected_sha256)?;
        Ok(template)
    }

    pub fn verify(&self, expected_sha256: &str) -> Result<(), TemplateError> {
        if self.sha256 != expected_sha256 {
            return Err(TemplateError::HashMismatch {
                name: self.name.clone(),
                expected: expected_sha256.to_string(),
                actual: self.sha256.clone(),
            });
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    /// Slot names in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        scan(&self.text, |piece| {
            if let Piece::Slot(s) = piece {
                out.push(s.to_string());
            }
        });
        out
    }

    /// Substitutes every `{slot}` in a single pass; slot values are never
    /// re-scanned.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String, TemplateError> {
        render_text(&self.name, &self.text, slots)
    }

    /// Renders the system and user turns as chat messages. The trailing
    /// open assistant turn is the generation prompt and is not a message.
    pub fn render_messages(&self, slots: &[(&str, &str)]) -> Result<Vec<Message>, TemplateError> {
        self.turns()?
            .into_iter()
            .map(|(role, body)| {
                Ok(Message {
                    role,
                    content: render_text(&self.name, body, slots)?,
                })
            })
            .collect()
    }

    fn turns(&self) -> Result<Vec<(Role, &str)>, TemplateError> {
        let structure = |detail: &str| TemplateError::Structure {
            name: self.name.clone(),
            detail: detail.into(),
        };
        let mut turns = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find(TURN_START) {
            rest = &rest[start + TURN_START.len()..];
            let (header, body) = rest
                .split_once('\n')
                .ok_or_else(|| structure("turn header without newline"))?;
            let role = match header.trim() {
                "system" => Role::System,
                "user" => Role::User,
                "assistant" => Role::Assistant,
                other => return Err(structure(&format!("unknown role {other:?}"))),
            };
            match body.find(TURN_END) {
                Some(end) => {
                    turns.push((role, body[..end].strip_suffix('\n').unwrap_or(&body[..end])));
                    rest = &body[end + TURN_END.len()..];
                }
                None if role == Role::Assistant && body.trim().is_empty() => break,
                None => return Err(structure("unterminated turn")),
            }
        }
        if turns.is_empty() {
            return Err(structure("no turns"));
        }
        Ok(turns)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn scan<'a>(text: &'a str, mut f: impl FnMut(Piece<'a>)) {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                f(Piece::Text(&rest[..open]));
                f(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                f(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    f(Piece::Text(rest));
}

fn render_text(name: &str, text: &str, slots: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out =
        String::with_capacity(text.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut missing = None;
    scan(text, |piece| match piece {
        Piece::Text(t) => out.push_str(t),
        Piece::Slot(s) => match slots.iter().find(|(k, _)| *k == s) {
            Some((_, v)) => out.push_str(v),
            None => {
                missing.get_or_insert_with(|| s.to_string());
            }
        },
    });
    match missing {
        Some(slot) => Err(TemplateError::MissingSlot {
            name: name.to_string(),
            slot,
        }),
        None => Ok(out),
    }
}

/// Where a template comes from: a file pinned by hash, or the built-in text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TemplateSource {
    #[serde(default)]
    pub path: Option<std::path::PathBuf>,
    #[serde(default)]
    pub sha256: Option<String>,
}

impl TemplateSource {
    /// Resolves against the built-in template; a configured hash must match
    /// whichever text is used.
    pub fn resolve(&self, builtin: PromptTemplate) -> Result<PromptTemplate, TemplateError> {
        let expected = self
            .sha256
            .clone()
            .unwrap_or_else(|| builtin.sha256().to_string());
        match &self.path {
            Some(path) => PromptTemplate::load(path, &expected),
            None => {
                builtin.verify(&expected)?;
                Ok(builtin)
            }
        }
    }
}
