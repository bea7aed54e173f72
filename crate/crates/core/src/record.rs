use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::CompositeLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("empty required field `{0}`")]
    EmptyField(&'static str),
    #[error("cannot build a label space from zero records")]
    EmptyDataset,
}

/// One student response: question, chosen answer and free-text explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTriplet {
    pub instance_id: String,
    pub question_text: String,
    pub chosen_answer: String,
    pub explanation: String,
}

impl QueryTriplet {
    pub fn new(
        instance_id: impl Into<String>,
        question_text: impl Into<String>,
        chosen_answer: impl Into<String>,
        explanation: impl Into<String>,
    ) -> Result<Self, RecordError> {
        let triplet = QueryTriplet {
            instance_id: instance_id.into(),
            question_text: question_text.into(),
            chosen_answer: chosen_answer.into(),
            explanation: explanation.into(),
        };
        triplet.validate()?;
        Ok(triplet)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.instance_id.trim().is_empty() {
            return Err(RecordError::EmptyField("instance_id"));
        }
        if self.question_text.trim().is_empty() {
            return Err(RecordError::EmptyField("question_text"));
        }
        if self.chosen_answer.trim().is_empty() {
            return Err(RecordError::EmptyField("chosen_answer"));
        }
        Ok(())
    }

    /// Text handed to the embedder.
    pub fn embedding_text(&self) -> String {
        format!(
            "Question: {}\nAnswer: {}\nExplanation: {}",
            self.question_text, self.chosen_answer, self.explanation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub triplet: QueryTriplet,
    pub label: CompositeLabel,
}

impl DatasetRecord {
    pub fn instance_id(&self) -> &str {
        &self.triplet.instance_id
    }
}

/// Deduplicated labels, sorted by canonical form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<CompositeLabel>,
}

impl LabelSpace {
    pub fn from_labels<I: IntoIterator<Item = CompositeLabel>>(
        labels: I,
    ) -> Result<Self, RecordError> {
        let set: BTreeSet<CompositeLabel> = labels.into_iter().collect();
        if set.is_empty() {
            return Err(RecordError::EmptyDataset);
        }
        Ok(LabelSpace {
            labels: set.into_iter().collect(),
        })
    }

    pub fn labels(&self) -> &[CompositeLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &CompositeLabel) -> bool {
        self.labels.binary_search(label).is_ok()
    }
}

pub fn build_label_space(records: &[DatasetRecord]) -> Result<LabelSpace, RecordError> {
    LabelSpace::from_labels(records.iter().map(|r| r.label.clone()))
}

/// Line-oriented interchange form of a record, used by the CLI artifacts.
/// `label` is optional so unlabeled prediction inputs share the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLine {
    pub instance_id: String,
    pub question: String,
    pub answer: String,
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<CompositeLabel>,
}

impl InstanceLine {
    pub fn triplet(&self) -> Result<QueryTriplet, RecordError> {
        QueryTriplet::new(
            self.instance_id.clone(),
            self.question.clone(),
            self.answer.clone(),
            self.explanation.clone(),
        )
    }
}

impl From<&DatasetRecord> for InstanceLine {
    fn from(r: &DatasetRecord) -> Self {
        InstanceLine {
            instance_id: r.triplet.instance_id.clone(),
            question: r.triplet.question_text.clone(),
            answer: r.triplet.chosen_answer.clone(),
            explanation: r.triplet.explanation.clone(),
            label: Some(r.label.clone()),
        }
    }
}
