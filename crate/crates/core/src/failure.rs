use std::fmt;

use serde::{Deserialize, Serialize};

/// Pipeline stage, used to attribute per-instance failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Embed,
    Retrieve,
    Reason,
    Generate,
    Judge,
    Rerank,
    Fuse,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Reason => "reason",
            Stage::Generate => "generate",
            Stage::Judge => "judge",
            Stage::Rerank => "rerank",
            Stage::Fuse => "fuse",
        };
        f.write_str(s)
    }
}

/// One instance that did not make it through a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub instance_id: String,
    pub stage: Stage,
    pub message: String,
    /// Whether the root cause is a backend (transport, fixture, protocol)
    /// rather than bad input.
    #[serde(default)]
    pub backend: bool,
}
