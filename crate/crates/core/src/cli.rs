//! Command implementations behind the `miscon` binary. Commands talk to each
//! other only through files in the configured output directory.
//!
//! Exit codes: 0 success, 1 input error, 2 backend error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::backends::{open_completion, open_embedder, BackendError};
use crate::config::{ConfigError, Overrides, RunConfig};
use crate::eval::{evaluate, PredictionLine, StagePredictions};
use crate::failure::StageFailure;
use crate::ingest::ingest_dataset;
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::label::CompositeLabel;
use crate::pipeline::{predict_batch, PipelineBackends, PredictSettings};
use crate::reasoning::{
    build_distilled_dataset, sft_examples, ChatExample, DistilledLine, DistilledRecord,
};
use crate::record::{DatasetRecord, InstanceLine, LabelSpace, QueryTriplet};
use crate::reranking::{build_verification_dataset, VerificationLine};
use crate::retrieval::{build_index, EmbeddedDataset, RetrievalError};

pub const RECORDS: &str = "records.jsonl";
pub const REJECTIONS: &str = "rejections.jsonl";
pub const INDEX: &str = "index.bin";
pub const INDEX_MANIFEST: &str = "index.manifest.json";
pub const DISTILLED: &str = "distilled.jsonl";
pub const SFT: &str = "sft.jsonl";
pub const DISTILL_FAILURES: &str = "distill.failures.jsonl";
pub const VERIFICATION: &str = "verification.jsonl";
pub const VERIFICATION_CHAT: &str = "verification.chat.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const PREDICTIONS_RETRIEVAL: &str = "predictions.retrieval.jsonl";
pub const PREDICTIONS_RERANK: &str = "predictions.rerank.jsonl";
pub const REASONING: &str = "reasoning.jsonl";
pub const PREDICT_FAILURES: &str = "predict.failures.jsonl";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Parser)]
#[command(
    name = "miscon",
    about = "Retrieve, reason, rerank and fuse misconception labels"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "miscon.toml")]
    pub config: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// CSV → records.jsonl + rejections.jsonl
    Ingest,
    /// records.jsonl → index.bin + manifest
    Index,
    /// records.jsonl → distilled.jsonl + sft.jsonl (teacher + judge)
    Distill,
    /// distilled.jsonl → verification.jsonl + chat export
    Augment,
    /// queries → predictions (fused, retrieval-only, rerank-only)
    Predict,
    /// predictions + truths → report.txt / report.json
    Evaluate,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Backend(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn backend_err(e: BackendError) -> CliError {
    match e {
        BackendError::Config(_) => CliError::Input(e.to_string()),
        _ => CliError::Backend(e.to_string()),
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// Loads the config, applies flag overrides and validates.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&cli.config)?;
    config.apply(Overrides {
        seed: cli.seed,
        workers: cli.workers,
        k: cli.k,
        alpha: cli.alpha,
        beta: cli.beta,
    });
    config.validate()?;
    Ok(config)
}

/// Runs one command; the returned string is a one-line summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Ingest => cmd_ingest(&config),
        Command::Index => cmd_index(&config),
        Command::Distill => cmd_distill(&config),
        Command::Augment => cmd_augment(&config),
        Command::Predict => cmd_predict(&config),
        Command::Evaluate => cmd_evaluate(&config),
    }
}

fn labeled_records(path: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    read_jsonl::<InstanceLine>(path)?
        .into_iter()
        .map(|line| {
            let label = line.label.clone().ok_or_else(|| {
                input(format!(
                    "{}: instance {} has no label",
                    path.display(),
                    line.instance_id
                ))
            })?;
            Ok(DatasetRecord {
                triplet: line.triplet().map_err(input)?,
                label,
            })
        })
        .collect()
}

/// Fails after writing the manifest when any instance failed; backend
/// causes take precedence for the exit code.
fn check_failures(
    failures: &[StageFailure],
    manifest: &Path,
    total: usize,
) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    let msg = format!(
        "{} of {} instances failed; see {}",
        failures.len(),
        total,
        manifest.display()
    );
    if failures.iter().any(|f| f.backend) {
        Err(CliError::Backend(msg))
    } else {
        Err(CliError::Input(msg))
    }
}

pub fn cmd_ingest(config: &RunConfig) -> Result<String, CliError> {
    let path = config
        .paths
        .dataset
        .as_ref()
        .ok_or_else(|| input("paths.dataset is not set"))?;
    let file = File::open(path)
        .map_err(|e| input(format!("cannot open dataset {}: {e}", path.display())))?;
    let outcome = ingest_dataset(
        BufReader::new(file),
        &config.ingest.columns,
        config.ingest.delimiter as u8,
    )
    .map_err(|e| input(format!("{}: {e}", path.display())))?;
    let lines: Vec<InstanceLine> = outcome.records.iter().map(InstanceLine::from).collect();
    write_jsonl(&config.out(RECORDS), &lines)?;
    let report = config.out(REJECTIONS);
    write_jsonl(&report, &outcome.rejections)?;

    let rows = outcome.row_count();
    let rejected = outcome.rejections.len();
    let labels = LabelSpace::from_labels(outcome.records.iter().map(|r| r.label.clone()))
        .map(|s| s.len())
        .unwrap_or(0);
    if rows > 0 && rejected as f64 / rows as f64 > config.ingest.reject_threshold {
        return Err(input(format!(
            "{rejected} of {rows} rows rejected, above threshold {}; see {}",
            config.ingest.reject_threshold,
            report.display()
        )));
    }
    Ok(format!(
        "ingested {} records ({} labels), rejected {rejected}",
        outcome.records.len(),
        labels
    ))
}

pub fn cmd_index(config: &RunConfig) -> Result<String, CliError> {
    let records = labeled_records(&config.out(RECORDS))?;
    let embedder = open_embedder(config.backend("embedder")?).map_err(backend_err)?;
    let index = build_index(&records, embedder.as_ref(), config.workers).map_err(|e| match e {
        RetrievalError::Backend { .. } => CliError::Backend(e.to_string()),
        _ => input(e),
    })?;
    index
        .save(&config.out(INDEX), &config.out(INDEX_MANIFEST))
        .map_err(input)?;
    Ok(format!(
        "indexed {} entries, dimension {}",
        index.len(),
        index.dimension()
    ))
}

pub fn cmd_distill(config: &RunConfig) -> Result<String, CliError> {
    let records = labeled_records(&config.out(RECORDS))?;
    let teacher = open_completion(config.backend("teacher")?).map_err(backend_err)?;
    let judge = open_completion(config.backend("judge")?).map_err(backend_err)?;
    let prompts = config.prompts()?;
    let outcome = build_distilled_dataset(
        &records,
        teacher.as_ref(),
        judge.as_ref(),
        config.m_candidates,
        config.seed,
        &prompts,
        config.workers,
    )
    .map_err(input)?;
    let lines: Vec<DistilledLine> = outcome.records.iter().map(DistilledLine::from).collect();
    write_jsonl(&config.out(DISTILLED), &lines)?;
    write_jsonl(
        &config.out(SFT),
        &sft_examples(&outcome.records, &prompts).map_err(input)?,
    )?;
    let manifest = config.out(DISTILL_FAILURES);
    write_jsonl(&manifest, &outcome.failures)?;
    check_failures(&outcome.failures, &manifest, records.len())?;
    Ok(format!("distilled {} records", lines.len()))
}

pub fn cmd_augment(config: &RunConfig) -> Result<String, CliError> {
    let space = LabelSpace::from_labels(
        labeled_records(&config.out(RECORDS))?
            .into_iter()
            .map(|r| r.label),
    )
    .map_err(input)?;
    let teacher_id = config
        .backend("teacher")
        .map(|d| d.model_id.clone())
        .unwrap_or_default();
    let distilled: Vec<DistilledRecord> = read_jsonl::<DistilledLine>(&config.out(DISTILLED))?
        .into_iter()
        .map(|l| l.into_record(&teacher_id).map_err(input))
        .collect::<Result<_, _>>()?;
    let template = config.verification_template()?;
    let examples = build_verification_dataset(
        &distilled,
        &space,
        config.m_negatives,
        config.seed,
        &template,
    )
    .map_err(input)?;
    let lines: Vec<VerificationLine> = examples.iter().map(VerificationLine::from).collect();
    let chat: Vec<ChatExample> = examples.iter().map(ChatExample::from).collect();
    write_jsonl(&config.out(VERIFICATION), &lines)?;
    write_jsonl(&config.out(VERIFICATION_CHAT), &chat)?;
    Ok(format!(
        "wrote {} verification examples from {} records",
        lines.len(),
        distilled.len()
    ))
}

fn query_lines(config: &RunConfig) -> Result<Vec<InstanceLine>, CliError> {
    let path = config
        .paths
        .queries
        .clone()
        .unwrap_or_else(|| config.out(RECORDS));
    Ok(read_jsonl(&path)?)
}

pub fn cmd_predict(config: &RunConfig) -> Result<String, CliError> {
    let queries: Vec<QueryTriplet> = query_lines(config)?
        .iter()
        .map(|l| l.triplet().map_err(input))
        .collect::<Result<_, _>>()?;
    let index =
        EmbeddedDataset::load(&config.out(INDEX), &config.out(INDEX_MANIFEST)).map_err(input)?;
    let embedder = open_embedder(config.backend("embedder")?).map_err(backend_err)?;
    if embedder.id() != index.embedder_id() {
        return Err(input(format!(
            "index was built with embedder {:?} but config names {:?}",
            index.embedder_id(),
            embedder.id()
        )));
    }
    let reasoner = open_completion(config.backend("reasoner")?).map_err(backend_err)?;
    let reranker = open_completion(config.backend("reranker")?).map_err(backend_err)?;
    let settings = PredictSettings {
        k: config.k,
        fusion: config.fusion(),
        seed: config.seed,
        exclude_self: config.exclude_self,
        verification: config.verification_template()?,
        prompts: config.prompts()?,
    };
    let backends = PipelineBackends {
        embedder: embedder.as_ref(),
        reasoner: reasoner.as_ref(),
        reranker: reranker.as_ref(),
    };
    let outcome = predict_batch(&queries, &index, backends, &settings, config.workers);

    let p = &outcome.predictions;
    let fused: Vec<PredictionLine> = p.iter().map(|x| x.fused.to_line(&x.instance_id)).collect();
    let rerank: Vec<PredictionLine> = p.iter().map(|x| x.rerank.to_line(&x.instance_id)).collect();
    let retrieval: Vec<PredictionLine> = p
        .iter()
        .map(|x| PredictionLine::from_ranking(x.instance_id.clone(), &x.retrieval))
        .collect();
    let traces: Vec<_> = p.iter().map(|x| x.reasoning.clone()).collect();
    write_jsonl(&config.out(PREDICTIONS), &fused)?;
    write_jsonl(&config.out(PREDICTIONS_RERANK), &rerank)?;
    write_jsonl(&config.out(PREDICTIONS_RETRIEVAL), &retrieval)?;
    write_jsonl(&config.out(REASONING), &traces)?;
    let manifest = config.out(PREDICT_FAILURES);
    write_jsonl(&manifest, &outcome.failures)?;
    check_failures(&outcome.failures, &manifest, queries.len())?;
    Ok(format!("predicted {} instances", fused.len()))
}

fn truth_map(config: &RunConfig) -> Result<BTreeMap<String, CompositeLabel>, CliError> {
    let path = config
        .paths
        .truths
        .clone()
        .or_else(|| config.paths.queries.clone())
        .unwrap_or_else(|| config.out(RECORDS));
    read_jsonl::<InstanceLine>(&path)?
        .into_iter()
        .map(|l| match l.label {
            Some(label) => Ok((l.instance_id, label)),
            None => Err(input(format!(
                "{}: instance {} has no label",
                path.display(),
                l.instance_id
            ))),
        })
        .collect()
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<String, CliError> {
    let truths = truth_map(config)?;
    let retrieval: Vec<PredictionLine> = read_jsonl(&config.out(PREDICTIONS_RETRIEVAL))?;
    let rerank: Vec<PredictionLine> = read_jsonl(&config.out(PREDICTIONS_RERANK))?;
    let fused: Vec<PredictionLine> = read_jsonl(&config.out(PREDICTIONS))?;
    let stages = [
        StagePredictions {
            stage: "Retrieval",
            lines: &retrieval,
        },
        StagePredictions {
            stage: "Reranking",
            lines: &rerank,
        },
        StagePredictions {
            stage: "Ensemble",
            lines: &fused,
        },
    ];
    let report = evaluate(&stages, &truths, &config.m_values).map_err(input)?;
    let table = report.to_table();
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&config.out(REPORT_TXT), &table)?;
    write_file(&config.out(REPORT_JSON), &json)?;
    Ok(table.trim_end().to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}
