//! Misconception detection pipeline: embedding retrieval over labeled
//! student responses, chain-of-thought reasoning, Yes/No verification
//! reranking, and softmax-weighted score fusion, plus MAP@m evaluation.

pub mod backends;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod eval;
pub mod failure;
pub mod fusion;
pub mod ingest;
pub mod jsonl;
pub mod label;
pub mod par;
pub mod pipeline;
pub mod ranking;
pub mod reasoning;
pub mod record;
pub mod reranking;
pub mod retrieval;
pub mod seed;
pub mod template;

pub use label::{parse_label, CompositeLabel, Correctness, ReasoningType};
pub use ranking::ScoredRanking;
pub use record::{build_label_space, DatasetRecord, LabelSpace, QueryTriplet};
