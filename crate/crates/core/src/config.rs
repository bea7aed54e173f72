//! Run configuration: one TOML file, relative paths resolved against the
//! file's directory, with command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendDescriptor, BackendKind};
use crate::contrastive::{MaskWeights, DEFAULT_TEMPERATURE};
use crate::eval::DEFAULT_M_VALUES;
use crate::fusion::FusionConfig;
use crate::ingest::ColumnMap;
use crate::reasoning::{ReasoningPrompts, DEFAULT_CANDIDATES};
use crate::reranking::DEFAULT_NEGATIVES;
use crate::retrieval::DEFAULT_TOP_K;
use crate::template::{PromptTemplate, TemplateError, TemplateSource};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid setting `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("backend `{0}` is not configured")]
    MissingBackend(&'static str),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Raw labeled CSV read by `ingest`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Instances to predict; defaults to the ingested records.
    #[serde(default)]
    pub queries: Option<PathBuf>,
    /// Labeled instances for `evaluate`; defaults to the ingested records.
    #[serde(default)]
    pub truths: Option<PathBuf>,
    /// Directory every command writes its artifacts into.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: None,
            queries: None,
            truths: None,
            out_dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub columns: ColumnMap,
    pub delimiter: char,
    /// Largest tolerated fraction of rejected rows.
    pub reject_threshold: f64,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            columns: ColumnMap::default(),
            delimiter: ',',
            reject_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub embedder: Option<BackendDescriptor>,
    pub reasoner: Option<BackendDescriptor>,
    pub teacher: Option<BackendDescriptor>,
    pub judge: Option<BackendDescriptor>,
    pub reranker: Option<BackendDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub verification: TemplateSource,
    pub reasoner: TemplateSource,
    pub teacher: TemplateSource,
    pub judge: TemplateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub k: usize,
    /// Exclude an instance's own index entries when it is queried.
    pub exclude_self: bool,
    pub temperature: f64,
    pub mask_weights: MaskWeights,
    pub m_candidates: usize,
    pub m_negatives: usize,
    pub alpha: f64,
    pub beta: f64,
    pub m_values: Vec<usize>,
    pub teacher_temperature: f64,
    pub max_tokens: u32,
    pub paths: Paths,
    pub ingest: IngestSettings,
    pub backends: Backends,
    pub templates: Templates,
}

impl Default for RunConfig {
    fn default() -> Self {
        let prompts = ReasoningPrompts::default();
        let fusion = FusionConfig::default();
        RunConfig {
            seed: 0,
            workers: 1,
            k: DEFAULT_TOP_K,
            exclude_self: false,
            temperature: DEFAULT_TEMPERATURE,
            mask_weights: MaskWeights::default(),
            m_candidates: DEFAULT_CANDIDATES,
            m_negatives: DEFAULT_NEGATIVES,
            alpha: fusion.alpha,
            beta: fusion.beta,
            m_values: DEFAULT_M_VALUES.to_vec(),
            teacher_temperature: prompts.teacher_temperature,
            max_tokens: prompts.max_tokens,
            paths: Paths::default(),
            ingest: IngestSettings::default(),
            backends: Backends::default(),
            templates: Templates::default(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(
        text: &str,
        base_dir: &Path,
        path_for_errors: &Path,
    ) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path_for_errors.to_path_buf(),
            source,
        })?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base, path)
    }

    pub fn apply(&mut self, o: Overrides) {
        self.seed = o.seed.unwrap_or(self.seed);
        self.workers = o.workers.unwrap_or(self.workers);
        self.k = o.k.unwrap_or(self.k);
        self.alpha = o.alpha.unwrap_or(self.alpha);
        self.beta = o.beta.unwrap_or(self.beta);
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for opt in [&mut p.dataset, &mut p.queries, &mut p.truths] {
            if let Some(path) = opt.as_mut() {
                join(path);
            }
        }
        join(&mut p.out_dir);
        let b = &mut self.backends;
        for desc in [
            &mut b.embedder,
            &mut b.reasoner,
            &mut b.teacher,
            &mut b.judge,
            &mut b.reranker,
        ]
        .into_iter()
        .flatten()
        {
            if desc.kind == BackendKind::Fixture {
                if let Some(f) = desc.fixture.as_mut() {
                    join(f);
                }
            }
        }
        let t = &mut self.templates;
        for src in [
            &mut t.verification,
            &mut t.reasoner,
            &mut t.teacher,
            &mut t.judge,
        ] {
            if let Some(path) = src.path.as_mut() {
                join(path);
            }
        }
    }

    /// Range checks on the hyperparameters.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "must be positive and finite"));
        }
        self.mask_weights
            .validate()
            .map_err(|e| invalid("mask_weights", e.to_string()))?;
        if self.m_candidates == 0 {
            return Err(invalid("m_candidates", "must be at least 1"));
        }
        self.fusion()
            .validate()
            .map_err(|e| invalid("alpha/beta", e.to_string()))?;
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return Err(invalid(
                "m_values",
                "must be a non-empty list of positive cutoffs",
            ));
        }
        if !(0.0..=1.0).contains(&self.ingest.reject_threshold) {
            return Err(invalid("ingest.reject_threshold", "must lie in [0, 1]"));
        }
        if !self.ingest.delimiter.is_ascii() {
            return Err(invalid(
                "ingest.delimiter",
                "must be a single ASCII character",
            ));
        }
        if !(self.teacher_temperature >= 0.0 && self.teacher_temperature.is_finite()) {
            return Err(invalid(
                "teacher_temperature",
                "must be non-negative and finite",
            ));
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn backend(&self, role: &'static str) -> Result<&BackendDescriptor, ConfigError> {
        let b = &self.backends;
        let desc = match role {
            "embedder" => &b.embedder,
            "reasoner" => &b.reasoner,
            "teacher" => &b.teacher,
            "judge" => &b.judge,
            "reranker" => &b.reranker,
            _ => &None,
        };
        desc.as_ref().ok_or(ConfigError::MissingBackend(role))
    }

    pub fn prompts(&self) -> Result<ReasoningPrompts, ConfigError> {
        let t = &self.templates;
        Ok(ReasoningPrompts {
            reasoner: t.reasoner.resolve(PromptTemplate::reasoner_v1())?,
            teacher: t.teacher.resolve(PromptTemplate::teacher_v1())?,
            judge: t.judge.resolve(PromptTemplate::judge_v1())?,
            teacher_temperature: self.teacher_temperature,
            max_tokens: self.max_tokens,
        })
    }

    pub fn verification_template(&self) -> Result<PromptTemplate, ConfigError> {
        Ok(self
            .templates
            .verification
            .resolve(PromptTemplate::verification_v1())?)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}
