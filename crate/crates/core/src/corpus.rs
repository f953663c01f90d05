//! Multiple-choice corpora: loading, validation, and the seeded eval/build split.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grading::normalize_label;
use crate::jsonl;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Path,
    Url,
    Base64,
}

/// Image reference passed through to the model backend untouched.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub kind: ImageKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

impl Choice {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McqSample {
    pub id: String,
    pub source: String,
    pub question: String,
    pub image: ImageRef,
    pub choices: Vec<Choice>,
    pub answer_key: String,
}

impl McqSample {
    pub fn labels(&self) -> Vec<&str> {
        self.choices.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn choice(&self, label: &str) -> Option<&Choice> {
        self.choices.iter().find(|c| c.label == label)
    }
}

/// A single failed sample invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    EmptyLabel { position: usize },
    DuplicateLabel { label: String },
    FewerThanTwoChoices,
    AnswerKeyNotAmongLabels { answer_key: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "id is empty"),
            Violation::EmptyLabel { position } => write!(f, "choice {position} has an empty label"),
            Violation::DuplicateLabel { label } => write!(f, "duplicate choice label {label:?}"),
            Violation::FewerThanTwoChoices => write!(f, "fewer than 2 choices"),
            Violation::AnswerKeyNotAmongLabels { answer_key } => {
                write!(f, "answer_key not among labels ({answer_key:?})")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file {path} not found")]
    Missing { path: PathBuf },
    #[error("reading corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: missing or invalid field {field:?}: {detail}")]
    Malformed {
        record: usize,
        field: String,
        detail: String,
    },
    #[error("record {record} ({id}): {}", join_violations(.violations))]
    Invalid {
        record: usize,
        id: String,
        violations: Vec<Violation>,
    },
    #[error("duplicate id {id:?} (records {first} and {second})")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Check every sample invariant, reporting all failures at once.
pub fn validate_sample(sample: McqSample) -> Result<McqSample, Vec<Violation>> {
    let mut violations = Vec::new();
    if sample.id.trim().is_empty() {
        violations.push(Violation::EmptyId);
    }
    if sample.choices.len() < 2 {
        violations.push(Violation::FewerThanTwoChoices);
    }
    let mut seen = HashSet::new();
    for (i, c) in sample.choices.iter().enumerate() {
        let norm = normalize_label(&c.label);
        if norm.is_empty() {
            violations.push(Violation::EmptyLabel { position: i + 1 });
        } else if !seen.insert(norm) {
            violations.push(Violation::DuplicateLabel {
                label: c.label.clone(),
            });
        }
    }
    let key_hits = sample
        .choices
        .iter()
        .filter(|c| c.label == sample.answer_key)
        .count();
    if key_hits != 1 {
        violations.push(Violation::AnswerKeyNotAmongLabels {
            answer_key: sample.answer_key.clone(),
        });
    }
    if violations.is_empty() {
        Ok(sample)
    } else {
        Err(violations)
    }
}

const REQUIRED_FIELDS: [&str; 6] = ["id", "source", "question", "image", "choices", "answer_key"];

fn parse_record(record: usize, line: &str) -> Result<McqSample, CorpusError> {
    let malformed = |field: &str, detail: String| CorpusError::Malformed {
        record,
        field: field.to_string(),
        detail,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| malformed("<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("<record>", "not an object".into()))?;
    for field in REQUIRED_FIELDS {
        if !obj.contains_key(field) {
            return Err(malformed(field, "field is missing".into()));
        }
    }
    // Field-by-field decode so the error names the offending field.
    let field = |name: &str| obj[name].clone();
    let str_field = |name: &str| -> Result<String, CorpusError> {
        field(name)
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| malformed(name, "expected a string".into()))
    };
    let image: ImageRef =
        serde_json::from_value(field("image")).map_err(|e| malformed("image", e.to_string()))?;
    let choices: Vec<Choice> = serde_json::from_value(field("choices"))
        .map_err(|e| malformed("choices", e.to_string()))?;
    Ok(McqSample {
        id: str_field("id")?,
        source: str_field("source")?,
        question: str_field("question")?,
        image,
        choices,
        answer_key: str_field("answer_key")?,
    })
}

/// Parse corpus text. Records are numbered from 1 in file order, blank lines skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<McqSample>, CorpusError> {
    let mut samples = Vec::new();
    let mut first_seen = std::collections::HashMap::new();
    for (record, (_, line)) in jsonl::numbered_lines(text).enumerate() {
        let record = record + 1;
        let sample = parse_record(record, line)?;
        let sample = validate_sample(sample).map_err(|violations| CorpusError::Invalid {
            record,
            id: obj_id(line),
            violations,
        })?;
        if let Some(&first) = first_seen.get(&sample.id) {
            return Err(CorpusError::DuplicateId {
                id: sample.id,
                first,
                second: record,
            });
        }
        first_seen.insert(sample.id.clone(), record);
        samples.push(sample);
    }
    Ok(samples)
}

fn obj_id(line: &str) -> String {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_owned))
        .unwrap_or_default()
}

pub fn load_corpus(path: &Path) -> Result<Vec<McqSample>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::Missing {
            path: path.to_path_buf(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn corpus_to_lines(samples: &[McqSample]) -> String {
    jsonl::to_lines(samples).expect("samples serialize")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub eval_set: Vec<McqSample>,
    pub build_set: Vec<McqSample>,
    pub seed: u64,
    pub eval_count: usize,
}

/// Seeded Fisher–Yates over corpus indices; the first `eval_count` go to
/// evaluation, the rest to dataset construction. Both halves sorted by id.
pub fn split_eval_build(corpus: &[McqSample], eval_count: usize, seed: u64) -> CorpusSplit {
    let order = SeededRng::new(seed).permutation(corpus.len());
    let take = eval_count.min(corpus.len());
    let mut eval_set: Vec<McqSample> = order[..take].iter().map(|&i| corpus[i].clone()).collect();
    let mut build_set: Vec<McqSample> = order[take..].iter().map(|&i| corpus[i].clone()).collect();
    eval_set.sort_by(|a, b| a.id.cmp(&b.id));
    build_set.sort_by(|a, b| a.id.cmp(&b.id));
    CorpusSplit {
        eval_set,
        build_set,
        seed,
        eval_count,
    }
}
