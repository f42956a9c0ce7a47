//! The unified JSON-lines schema.
//!
//! One JSON object per line:
//!
//! | field            | type                               | notes |
//! |------------------|------------------------------------|-------|
//! | `id`             | string                             | required |
//! | `question`       | string                             | required |
//! | `answer`         | string or number                   | required |
//! | `rationale`      | string                             | exemplar with a rationale payload |
//! | `decomposition`  | `[{"question": .., "answer": ..}]` | exemplar with a decomposition payload |
//! | `categories`     | list of category names             | optional |
//! | `source_dataset` | string                             | defaults to the file stem |
//! | `context`        | string                             | exemplars only; shown before the question |
//! | `answer_type`    | `"numeric"` or `"span"`            | targets; inferred when absent |
//! | `table`          | `{header, rows, pre_text, post_text}` | targets only |
//!
//! A line with `rationale` or `decomposition` is an exemplar, otherwise a
//! target item. A file must hold only one kind.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    parse_number, read_file, AbilityPayload, AnswerType, Category, DataError, Dataset,
    DecompositionStep, Exemplar, TableContext, TargetItem,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnifiedStep {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub id: String,
    pub question: String,
    #[serde(deserialize_with = "string_or_number")]
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<UnifiedStep>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_type: Option<AnswerType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableContext>,
}

fn string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(if b { "yes" } else { "no" }.to_owned()),
        other => Err(serde::de::Error::custom(format!("expected string or number, got {other}"))),
    }
}

impl UnifiedRecord {
    pub fn is_exemplar(&self) -> bool {
        self.rationale.is_some() || self.decomposition.is_some()
    }

    pub fn from_exemplar(e: &Exemplar) -> Self {
        let (rationale, decomposition) = match &e.payload {
            AbilityPayload::Rationale(r) => (Some(r.clone()), None),
            AbilityPayload::Decomposition(steps) => (
                None,
                Some(
                    steps
                        .iter()
                        .map(|s| UnifiedStep {
                            question: s.sub_question.clone(),
                            answer: s.sub_answer.clone(),
                        })
                        .collect(),
                ),
            ),
        };
        Self {
            id: e.id.clone(),
            question: e.question.clone(),
            answer: e.answer.clone(),
            rationale,
            decomposition,
            categories: e.categories.iter().copied().collect(),
            source_dataset: Some(e.source_dataset.clone()),
            context: e.context.clone(),
            answer_type: None,
            table: None,
        }
    }

    pub fn from_target(t: &TargetItem) -> Self {
        Self {
            id: t.id.clone(),
            question: t.question.clone(),
            answer: t.gold_answer.clone(),
            source_dataset: Some(t.dataset.clone()),
            answer_type: Some(t.answer_type),
            table: t.context.clone(),
            ..Self::default()
        }
    }

    pub fn into_exemplar(self, default_source: &str) -> Exemplar {
        let payload = match (self.rationale, self.decomposition) {
            (_, Some(steps)) => AbilityPayload::Decomposition(
                steps
                    .into_iter()
                    .map(|s| DecompositionStep::new(s.question, s.answer))
                    .collect(),
            ),
            (Some(r), None) => AbilityPayload::Rationale(r),
            (None, None) => AbilityPayload::Rationale(String::new()),
        };
        Exemplar {
            id: self.id,
            question: self.question,
            answer: self.answer,
            payload,
            categories: self.categories.into_iter().collect::<BTreeSet<_>>(),
            source_dataset: self.source_dataset.unwrap_or_else(|| default_source.to_owned()),
            context: self.context,
        }
    }

    pub fn into_target(self, default_source: &str) -> TargetItem {
        let answer_type = self.answer_type.unwrap_or(if parse_number(&self.answer).is_some() {
            AnswerType::Numeric
        } else {
            AnswerType::Span
        });
        TargetItem {
            id: self.id,
            question: self.question,
            gold_answer: self.answer,
            context: self.table,
            answer_type,
            dataset: self.source_dataset.unwrap_or_else(|| default_source.to_owned()),
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Parse JSON-lines text into unified records. Blank lines are skipped.
pub fn parse_lines(path: &Path, text: &str) -> Result<Vec<UnifiedRecord>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<UnifiedRecord>(line).map_err(|e| {
                let message = e.to_string();
                if message.starts_with("missing field") {
                    DataError::Schema {
                        path: path.to_owned(),
                        record: format!("line {}", i + 1),
                        message,
                    }
                } else {
                    DataError::Parse {
                        path: path.to_owned(),
                        line: i + 1,
                        message,
                    }
                }
            })
        })
        .collect()
}

pub fn from_records(
    path: &Path,
    records: Vec<UnifiedRecord>,
    default_source: &str,
) -> Result<Dataset, DataError> {
    let exemplars = records.iter().filter(|r| r.is_exemplar()).count();
    if exemplars == 0 {
        return Ok(Dataset::Targets(
            records.into_iter().map(|r| r.into_target(default_source)).collect(),
        ));
    }
    if exemplars != records.len() {
        let first_target = records.iter().find(|r| !r.is_exemplar()).expect("mixed");
        return Err(DataError::Schema {
            path: path.to_owned(),
            record: first_target.id.clone(),
            message: "file mixes exemplars and target items; missing 'rationale' or 'decomposition'".into(),
        });
    }
    Ok(Dataset::Exemplars(
        records.into_iter().map(|r| r.into_exemplar(default_source)).collect(),
    ))
}

pub fn load(path: &Path) -> Result<Dataset, DataError> {
    let text = read_file(path)?;
    let records = parse_lines(path, &text)?;
    from_records(path, records, &file_stem(path))
}

pub fn to_records(dataset: &Dataset) -> Vec<UnifiedRecord> {
    match dataset {
        Dataset::Exemplars(v) => v.iter().map(UnifiedRecord::from_exemplar).collect(),
        Dataset::Targets(v) => v.iter().map(UnifiedRecord::from_target).collect(),
    }
}

pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for r in to_records(dataset) {
        out.push_str(&serde_json::to_string(&r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.to_owned(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(to_jsonl(dataset).as_bytes()).map_err(io)
}
