//! Three-level composite labels.
//!
//! A label is the tuple (answer correctness, reasoning type, misconception)
//! with canonical text form `<correctness>_<reasoning_type>:<misconception>`,
//! e.g. `False_Misconception:Incomplete` or `True_Correct:NA`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Sentinel misconception value for labels whose reasoning type is not
/// `Misconception`.
pub const NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Correctness {
    True,
    False,
}

impl Correctness {
    pub fn as_str(self) -> &'static str {
        match self {
            Correctness::True => "True",
            Correctness::False => "False",
        }
    }
}

impl FromStr for Correctness {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "True" => Ok(Correctness::True),
            "False" => Ok(Correctness::False),
            other => Err(LabelError::UnknownCorrectness(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReasoningType {
    Correct,
    Misconception,
    Neither,
}

impl ReasoningType {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Correct => "Correct",
            ReasoningType::Misconception => "Misconception",
            ReasoningType::Neither => "Neither",
        }
    }
}

impl FromStr for ReasoningType {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Correct" => Ok(ReasoningType::Correct),
            "Misconception" => Ok(ReasoningType::Misconception),
            "Neither" => Ok(ReasoningType::Neither),
            other => Err(LabelError::UnknownReasoningType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("malformed label {0:?}: expected `<correctness>_<reasoning_type>:<misconception>`")]
    Malformed(String),
    #[error("unknown correctness {0:?}: expected True or False")]
    UnknownCorrectness(String),
    #[error("unknown reasoning type {0:?}: expected Correct, Misconception or Neither")]
    UnknownReasoningType(String),
    #[error("hierarchy violation: reasoning type {reasoning_type} requires misconception NA, got {misconception:?}")]
    UnexpectedMisconception {
        reasoning_type: &'static str,
        misconception: String,
    },
    #[error("hierarchy violation: reasoning type Misconception requires a non-empty misconception other than NA")]
    MissingMisconception,
}

/// A validated composite label. Construction goes through [`CompositeLabel::new`]
/// or parsing, so the NA rule always holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompositeLabel {
    correctness: Correctness,
    reasoning_type: ReasoningType,
    misconception: Option<String>,
    canonical: String,
}

impl CompositeLabel {
    /// `misconception` is trimmed; `None`, empty and `"NA"` all mean the sentinel.
    pub fn new(
        correctness: Correctness,
        reasoning_type: ReasoningType,
        misconception: Option<&str>,
    ) -> Result<Self, LabelError> {
        let misconception = misconception
            .map(str::trim)
            .filter(|m| !m.is_empty() && *m != NA)
            .map(str::to_string);
        match (reasoning_type, &misconception) {
            (ReasoningType::Misconception, None) => return Err(LabelError::MissingMisconception),
            (ReasoningType::Correct | ReasoningType::Neither, Some(m)) => {
                return Err(LabelError::UnexpectedMisconception {
                    reasoning_type: reasoning_type.as_str(),
                    misconception: m.clone(),
                })
            }
            _ => {}
        }
        let canonical = format!(
            "{}_{}:{}",
            correctness.as_str(),
            reasoning_type.as_str(),
            misconception.as_deref().unwrap_or(NA)
        );
        Ok(CompositeLabel {
            correctness,
            reasoning_type,
            misconception,
            canonical,
        })
    }

    /// Builds a label from the dataset's joint category column
    /// (`<correctness>_<reasoning_type>`) and its misconception column.
    pub fn from_category(category: &str, misconception: Option<&str>) -> Result<Self, LabelError> {
        let (correctness, reasoning_type) = category
            .trim()
            .split_once('_')
            .ok_or_else(|| LabelError::Malformed(category.to_string()))?;
        CompositeLabel::new(correctness.parse()?, reasoning_type.parse()?, misconception)
    }

    pub fn correctness(&self) -> Correctness {
        self.correctness
    }

    pub fn reasoning_type(&self) -> ReasoningType {
        self.reasoning_type
    }

    /// The misconception name, or `None` for the NA sentinel.
    pub fn misconception(&self) -> Option<&str> {
        self.misconception.as_deref()
    }

    /// Misconception slot text, with the sentinel spelled out.
    pub fn misconception_or_na(&self) -> &str {
        self.misconception.as_deref().unwrap_or(NA)
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }
}

/// Parses a canonical label string.
pub fn parse_label(text: &str) -> Result<CompositeLabel, LabelError> {
    let (head, misconception) = text
        .split_once(':')
        .ok_or_else(|| LabelError::Malformed(text.to_string()))?;
    let (correctness, reasoning_type) = head
        .split_once('_')
        .ok_or_else(|| LabelError::Malformed(text.to_string()))?;
    let correctness: Correctness = correctness.parse()?;
    let reasoning_type: ReasoningType = reasoning_type.parse()?;
    let misconception = misconception.trim();
    if misconception.is_empty() {
        return Err(match reasoning_type {
            ReasoningType::Misconception => LabelError::MissingMisconception,
            _ => LabelError::Malformed(text.to_string()),
        });
    }
    CompositeLabel::new(correctness, reasoning_type, Some(misconception))
}

impl FromStr for CompositeLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

impl fmt::Display for CompositeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl Ord for CompositeLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl PartialOrd for CompositeLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for CompositeLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical)
    }
}

impl<'de> Deserialize<'de> for CompositeLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_label(&text).map_err(serde::de::Error::custom)
    }
}
