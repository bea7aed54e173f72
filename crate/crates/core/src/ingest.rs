//! Delimited-text ingestion of labeled student responses.
//!
//! Bad rows never abort ingestion: they land in the rejection report with
//! their data-row index (0-based, header excluded) so that
//! `records.len() + rejections.len()` always equals the number of data rows.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CompositeLabel;
use crate::record::{DatasetRecord, QueryTriplet};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("unreadable header: {0}")]
    Header(#[source] csv::Error),
}

/// Header names for each field. Defaults follow the public student
/// misconceptions competition files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub instance_id: String,
    pub question_text: String,
    pub chosen_answer: String,
    pub explanation: String,
    pub category: String,
    pub misconception: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            instance_id: "row_id".into(),
            question_text: "QuestionText".into(),
            chosen_answer: "MC_Answer".into(),
            explanation: "StudentExplanation".into(),
            category: "Category".into(),
            misconception: "Misconception".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub records: Vec<DatasetRecord>,
    pub rejections: Vec<Rejection>,
}

impl IngestOutcome {
    pub fn row_count(&self) -> usize {
        self.records.len() + self.rejections.len()
    }
}

struct Positions {
    instance_id: usize,
    question_text: usize,
    chosen_answer: usize,
    explanation: usize,
    category: usize,
    misconception: usize,
}

impl Positions {
    fn resolve(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Self, IngestError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
        };
        Ok(Positions {
            instance_id: find(&map.instance_id)?,
            question_text: find(&map.question_text)?,
            chosen_answer: find(&map.chosen_answer)?,
            explanation: find(&map.explanation)?,
            category: find(&map.category)?,
            misconception: find(&map.misconception)?,
        })
    }
}

pub fn ingest_dataset<R: Read>(
    source: R,
    columns: &ColumnMap,
    delimiter: u8,
) -> Result<IngestOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers().map_err(IngestError::Header)?.clone();
    let pos = Positions::resolve(&headers, columns)?;

    let mut outcome = IngestOutcome::default();
    let mut seen_ids = HashSet::new();
    for (row_index, row) in reader.records().enumerate() {
        let parsed = row
            .map_err(|e| format!("unparsable row: {e}"))
            .and_then(|row| parse_row(&row, &pos, columns));
        match parsed {
            Ok(record) if !seen_ids.insert(record.triplet.instance_id.clone()) => {
                outcome.rejections.push(Rejection {
                    row_index,
                    reason: format!("duplicate instance id {:?}", record.triplet.instance_id),
                });
            }
            Ok(record) => outcome.records.push(record),
            Err(reason) => outcome.rejections.push(Rejection { row_index, reason }),
        }
    }
    Ok(outcome)
}

fn parse_row(
    row: &csv::StringRecord,
    pos: &Positions,
    columns: &ColumnMap,
) -> Result<DatasetRecord, String> {
    let field = |idx: usize, name: &str| {
        row.get(idx)
            .map(str::trim)
            .ok_or_else(|| format!("row has no value for column `{name}`"))
    };
    let instance_id = field(pos.instance_id, &columns.instance_id)?;
    let triplet = QueryTriplet::new(
        instance_id,
        field(pos.question_text, &columns.question_text)?,
        field(pos.chosen_answer, &columns.chosen_answer)?,
        field(pos.explanation, &columns.explanation)?,
    )
    .map_err(|e| e.to_string())?;
    let category = field(pos.category, &columns.category)?;
    if category.is_empty() {
        return Err(format!("empty required field `{}`", columns.category));
    }
    let misconception = field(pos.misconception, &columns.misconception)?;
    let label = CompositeLabel::from_category(category, Some(misconception))
        .map_err(|e| format!("label: {e}"))?;
    Ok(DatasetRecord { triplet, label })
}
