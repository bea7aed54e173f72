//! Shared helpers for the integration tests, including the generator for
//! the 10-instance fixture corpus under `tests/fixtures/corpus/`.
//!
//! Regenerate the checked-in corpus with
//! `MISCON_REGENERATE=1 cargo test --test corpus`.
#![allow(dead_code)]

pub mod criteria;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use miscon::backends::{CompletionFixtureEntry, CompletionRequest, EmbeddingFixtureEntry};
use miscon::jsonl::to_jsonl_string;
use miscon::reasoning::{
    candidate_request, judge_reprompt, judge_request, reasoner_request, ReasoningPrompts,
    ReasoningTrace,
};
use miscon::reranking::build_prompt;
use miscon::template::PromptTemplate;
use miscon::{parse_label, CompositeLabel, DatasetRecord, QueryTriplet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SEED: u64 = 7;
pub const CORRECT: &str = "True_Correct:NA";
pub const ADDITIVE: &str = "False_Misconception:Additive";
pub const DENOMINATOR: &str = "False_Misconception:Denominator_only";
pub const NEITHER: &str = "True_Neither:NA";
pub const LABELS: [&str; 4] = [CORRECT, ADDITIVE, DENOMINATOR, NEITHER];

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn corpus_dir() -> PathBuf {
    manifest_dir().join("tests/fixtures/corpus")
}

pub fn goldens_dir() -> PathBuf {
    manifest_dir().join("tests/fixtures/goldens")
}

pub fn label(s: &str) -> CompositeLabel {
    parse_label(s).unwrap()
}

struct Row {
    id: &'static str,
    question: &'static str,
    answer: &'static str,
    explanation: &'static str,
    category: &'static str,
    misconception: &'static str,
    reasoning: &'static str,
}

const HALF_PLUS_QUARTER: &str = "What is 1/2 + 1/4?";
const COMPARE_EIGHTHS: &str = "Which is larger, 3/8 or 1/2?";

const ROWS: [Row; 10] = [
    Row {
        id: "r01",
        question: HALF_PLUS_QUARTER,
        answer: "3/4",
        explanation: "I made the denominators the same: 2/4 + 1/4 = 3/4.",
        category: "True_Correct",
        misconception: "NA",
        reasoning: "The student converts 1/2 to 2/4 and adds quarters. The method is valid and the answer is right.",
    },
    Row {
        id: "r02",
        question: HALF_PLUS_QUARTER,
        answer: "3/4",
        explanation: "Half is two quarters, plus one quarter is three quarters.",
        category: "True_Correct",
        misconception: "NA",
        reasoning: "The student reasons with quarters as a common unit. Sound reasoning, correct answer.",
    },
    Row {
        id: "r03",
        question: COMPARE_EIGHTHS,
        answer: "1/2",
        explanation: "3/8 is less than 4/8 which is 1/2.",
        category: "True_Correct",
        misconception: "NA",
        reasoning: "The student rewrites 1/2 as 4/8 and compares numerators. The comparison is valid.",
    },
    Row {
        id: "r04",
        question: HALF_PLUS_QUARTER,
        answer: "2/6",
        explanation: "I added the tops and the bottoms.",
        category: "False_Misconception",
        misconception: "Additive",
        reasoning: "The student adds numerators and denominators separately, treating fractions as pairs of whole numbers.",
    },
    Row {
        id: "r05",
        question: "What is 2/3 + 1/3?",
        answer: "3/6",
        explanation: "2+1=3 and 3+3=6.",
        category: "False_Misconception",
        misconception: "Additive",
        reasoning: "The student sums the denominators as well as the numerators. Wrong answer from a systematic error.",
    },
    Row {
        id: "r06",
        question: "What is 1/5 + 2/5?",
        answer: "3/10",
        explanation: "Add the numerators and add the denominators.",
        category: "False_Misconception",
        misconception: "Additive",
        reasoning: "The student states a rule of adding both parts. This is the whole-number addition error.",
    },
    Row {
        id: "r07",
        question: COMPARE_EIGHTHS,
        answer: "3/8",
        explanation: "8 is bigger than 2 so 3/8 is bigger.",
        category: "False_Misconception",
        misconception: "Denominator_only",
        reasoning: "The student compares only denominators and concludes the larger denominator gives the larger fraction.",
    },
    Row {
        id: "r08",
        question: "Which is larger, 1/3 or 1/4?",
        answer: "1/4",
        explanation: "Four is more than three.",
        category: "False_Misconception",
        misconception: "Denominator_only",
        reasoning: "The student looks at the denominators alone. Larger denominator is taken as a larger fraction.",
    },
    Row {
        id: "r09",
        question: HALF_PLUS_QUARTER,
        answer: "3/4",
        explanation: "I guessed.",
        category: "True_Neither",
        misconception: "NA",
        reasoning: "The answer is right but the explanation gives no mathematical reasoning at all.",
    },
    Row {
        id: "r10",
        question: COMPARE_EIGHTHS,
        answer: "1/2",
        explanation: "It just looks bigger.",
        category: "True_Neither",
        misconception: "NA",
        reasoning: "The answer is right but the justification is visual and vague, with no identifiable error.",
    },
];

/// Judge scores per record and candidate. `None` marks a first answer with
/// no usable number; the reprompt then returns the paired score.
pub const JUDGE_TABLE: [[(Option<f64>, f64); 4]; 10] = [
    [
        (Some(6.0), 6.0),
        (Some(8.0), 8.0),
        (Some(8.0), 8.0),
        (Some(5.0), 5.0),
    ],
    [
        (Some(9.0), 9.0),
        (Some(9.0), 9.0),
        (Some(9.0), 9.0),
        (Some(9.0), 9.0),
    ],
    [
        (Some(3.0), 3.0),
        (Some(4.0), 4.0),
        (Some(7.0), 7.0),
        (Some(2.0), 2.0),
    ],
    [
        (Some(5.0), 5.0),
        (Some(5.0), 5.0),
        (Some(6.0), 6.0),
        (Some(6.0), 6.0),
    ],
    [
        (None, 7.0),
        (Some(6.0), 6.0),
        (Some(2.0), 2.0),
        (Some(7.0), 7.0),
    ],
    [
        (Some(1.0), 1.0),
        (Some(2.0), 2.0),
        (Some(3.0), 3.0),
        (Some(10.0), 10.0),
    ],
    [
        (Some(8.0), 8.0),
        (Some(7.5), 7.5),
        (Some(8.0), 8.0),
        (Some(8.0), 8.0),
    ],
    [
        (Some(4.0), 4.0),
        (Some(9.0), 9.0),
        (Some(2.0), 2.0),
        (Some(9.0), 9.0),
    ],
    [
        (Some(0.0), 0.0),
        (Some(0.0), 0.0),
        (Some(0.0), 0.0),
        (Some(1.0), 1.0),
    ],
    [
        (Some(10.0), 10.0),
        (Some(10.0), 10.0),
        (Some(2.0), 2.0),
        (Some(3.0), 3.0),
    ],
];

pub fn records() -> Vec<DatasetRecord> {
    ROWS.iter()
        .map(|r| DatasetRecord {
            triplet: QueryTriplet::new(r.id, r.question, r.answer, r.explanation).unwrap(),
            label: CompositeLabel::from_category(r.category, Some(r.misconception)).unwrap(),
        })
        .collect()
}

pub fn reasoning_of(id: &str) -> ReasoningTrace {
    let row = ROWS.iter().find(|r| r.id == id).unwrap();
    ReasoningTrace {
        instance_id: id.to_string(),
        text: row.reasoning.to_string(),
        producer: "fixture-reasoner".into(),
        candidate_index: None,
        judge_score: None,
    }
}

fn csv_text(rows: &[[&str; 6]]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "row_id",
        "QuestionText",
        "MC_Answer",
        "StudentExplanation",
        "Category",
        "Misconception",
    ])
    .unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn row_fields(r: &Row) -> [&str; 6] {
    [
        r.id,
        r.question,
        r.answer,
        r.explanation,
        r.category,
        r.misconception,
    ]
}

fn malformed_csv() -> String {
    let keep = ["r01", "r02", "r04", "r05", "r07", "r08", "r09", "r10"];
    let mut text = csv_text(&[]);
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for (i, r) in ROWS.iter().filter(|r| keep.contains(&r.id)).enumerate() {
        w.write_record(row_fields(r)).unwrap();
        if i == 2 {
            // Unknown category value.
            w.write_record([
                "b01",
                HALF_PLUS_QUARTER,
                "3/4",
                "Because.",
                "Maybe_Correct",
                "NA",
            ])
            .unwrap();
        }
        if i == 5 {
            // Too few fields.
            w.write_record(["b02", COMPARE_EIGHTHS, "1/2"]).unwrap();
        }
    }
    text.push_str(&String::from_utf8(w.into_inner().unwrap()).unwrap());
    text
}

const CENTERS: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn embeddings(records: &[DatasetRecord]) -> Vec<EmbeddingFixtureEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    records
        .iter()
        .map(|r| {
            let center = &CENTERS[LABELS.iter().position(|l| label(l) == r.label).unwrap()];
            let vector = center
                .iter()
                .map(|c| round4(c + rng.gen_range(-0.7..0.7)))
                .collect();
            EmbeddingFixtureEntry {
                key: None,
                text: Some(r.triplet.embedding_text()),
                vector,
            }
        })
        .collect()
}

fn entry(
    request: &CompletionRequest,
    text: impl Into<String>,
    note: impl Into<String>,
) -> CompletionFixtureEntry {
    CompletionFixtureEntry {
        key: request.fixture_key(),
        text: text.into(),
        logprobs: None,
        note: Some(note.into()),
    }
}

/// Reranker logit margin for `(record, candidate)`: truth +1.5, others
/// below zero, with a few planted reranker mistakes.
pub fn planted_margin(id: &str, truth: &str, candidate: &str) -> f64 {
    match (id, candidate) {
        ("r09", CORRECT) => 2.5,
        ("r05", DENOMINATOR) => 1.6,
        ("r03", CORRECT) => 0.0,
        ("r03", ADDITIVE) => 0.1,
        _ if candidate == truth => 1.5,
        _ => -2.0 + 0.25 * LABELS.iter().position(|l| *l == candidate).unwrap() as f64,
    }
}

fn reranker_entries(records: &[DatasetRecord]) -> Vec<CompletionFixtureEntry> {
    let template = PromptTemplate::verification_v1();
    let mut out = Vec::new();
    for r in records {
        let trace = reasoning_of(r.instance_id());
        for cand in LABELS {
            let prompt = build_prompt(&r.triplet, &trace, &label(cand), &template).unwrap();
            let m = planted_margin(r.instance_id(), r.label.canonical(), cand);
            // log σ(m) and log σ(−m): their difference is m.
            let yes = -(-m).exp().ln_1p();
            let no = -m.exp().ln_1p();
            let logprobs = BTreeMap::from([
                ("Yes".to_string(), yes),
                ("No".to_string(), no),
                ("Maybe".to_string(), -6.0),
            ]);
            out.push(CompletionFixtureEntry {
                key: prompt.request().fixture_key(),
                text: if m > 0.0 { "Yes" } else { "No" }.into(),
                logprobs: Some(logprobs),
                note: Some(format!("{} / {cand}", r.instance_id())),
            });
        }
    }
    out
}

fn teacher_text(r: &DatasetRecord, index: usize) -> String {
    format!(
        "Rationale {index} for {}: {}",
        r.instance_id(),
        reasoning_of(r.instance_id()).text
    )
}

pub fn candidate_trace(r: &DatasetRecord, index: usize) -> ReasoningTrace {
    ReasoningTrace {
        instance_id: r.instance_id().to_string(),
        text: teacher_text(r, index),
        producer: "fixture-teacher".into(),
        candidate_index: Some(index),
        judge_score: None,
    }
}

fn teacher_and_judge(
    records: &[DatasetRecord],
) -> (Vec<CompletionFixtureEntry>, Vec<CompletionFixtureEntry>) {
    let prompts = ReasoningPrompts::default();
    let (mut teacher, mut judge) = (Vec::new(), Vec::new());
    for (ri, r) in records.iter().enumerate() {
        for (ci, (first, score)) in JUDGE_TABLE[ri].iter().enumerate() {
            let req = candidate_request(r, ci, &prompts, CORPUS_SEED).unwrap();
            teacher.push(entry(
                &req,
                teacher_text(r, ci),
                format!("{} candidate {ci}", r.instance_id()),
            ));
            let jreq = judge_request(&candidate_trace(r, ci), r, &prompts).unwrap();
            let note = format!("{} candidate {ci}", r.instance_id());
            match first {
                Some(s) => judge.push(entry(&jreq, format!("Score: {s}"), note)),
                None => {
                    let raw = "Looks consistent to me.";
                    judge.push(entry(&jreq, raw, note.clone()));
                    judge.push(entry(
                        &judge_reprompt(&jreq, raw),
                        format!("{score}"),
                        note + " reprompt",
                    ));
                }
            }
        }
    }
    (teacher, judge)
}

const CONFIG: &str = r#"seed = 7
workers = 1
k = 3
exclude_self = true
m_candidates = 4
m_negatives = 3
m_values = [1, 3, 5]

[paths]
dataset = "train.csv"
out_dir = "out"

[backends.embedder]
kind = "fixture"
fixture = "embed.jsonl"
model_id = "fixture-embed-d4"

[backends.reasoner]
kind = "fixture"
fixture = "reasoner.jsonl"
model_id = "fixture-reasoner"

[backends.teacher]
kind = "fixture"
fixture = "teacher.jsonl"
model_id = "fixture-teacher"

[backends.judge]
kind = "fixture"
fixture = "judge.jsonl"
model_id = "fixture-judge"

[backends.reranker]
kind = "fixture"
fixture = "reranker.jsonl"
model_id = "fixture-reranker"
"#;

/// Every corpus file as `(name, contents)`.
pub fn corpus_files() -> Vec<(&'static str, String)> {
    let recs = records();
    let prompts = ReasoningPrompts::default();
    let reasoner: Vec<_> = recs
        .iter()
        .map(|r| {
            let req = reasoner_request(&r.triplet, &prompts, CORPUS_SEED).unwrap();
            entry(&req, reasoning_of(r.instance_id()).text, r.instance_id())
        })
        .collect();
    let (teacher, judge) = teacher_and_judge(&recs);
    let rows: Vec<[&str; 6]> = ROWS.iter().map(row_fields).collect();
    vec![
        ("miscon.toml", CONFIG.to_string()),
        ("train.csv", csv_text(&rows)),
        ("malformed.csv", malformed_csv()),
        ("embed.jsonl", to_jsonl_string(&embeddings(&recs))),
        ("reasoner.jsonl", to_jsonl_string(&reasoner)),
        ("reranker.jsonl", to_jsonl_string(&reranker_entries(&recs))),
        ("teacher.jsonl", to_jsonl_string(&teacher)),
        ("judge.jsonl", to_jsonl_string(&judge)),
    ]
}

/// Copies the checked-in corpus into a fresh directory.
pub fn corpus_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(corpus_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    dir
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
