use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_awaiting_reply, ChatBackend, Conversation, GatewayError, GenerationSettings};
use crate::jsonl;

/// One fixture line: `{sample_id, turn, text}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub sample_id: String,
    pub turn: usize,
    pub text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("reading fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("fixture line {line}: duplicate key ({sample_id:?}, {turn})")]
    Duplicate {
        line: usize,
        sample_id: String,
        turn: usize,
    },
}

/// Replays recorded assistant texts. Byte-deterministic and stateless.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<(String, usize), String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, turn: usize, text: impl Into<String>) {
        self.replies.insert((sample_id.into(), turn), text.into());
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut b = Self::new();
        for e in entries {
            b.insert(e.sample_id, e.turn, e.text);
        }
        b
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut b = Self::new();
        for (line, raw) in jsonl::numbered_lines(text) {
            let e: FixtureEntry =
                jsonl::parse_line(raw).map_err(|err| FixtureError::Malformed {
                    line,
                    detail: err.to_string(),
                })?;
            let key = (e.sample_id, e.turn);
            if b.replies.contains_key(&key) {
                return Err(FixtureError::Duplicate {
                    line,
                    sample_id: key.0,
                    turn: key.1,
                });
            }
            b.replies.insert(key, e.text);
        }
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> impl Iterator<Item = FixtureEntry> + '_ {
        self.replies
            .iter()
            .map(|((sample_id, turn), text)| FixtureEntry {
                sample_id: sample_id.clone(),
                turn: *turn,
                text: text.clone(),
            })
    }

    pub fn to_lines(&self) -> String {
        jsonl::to_lines(self.entries()).expect("fixture entries serialize")
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    pub fn reply(&self, sample_id: &str, turn: usize) -> Result<&str, GatewayError> {
        self.replies
            .get(&(sample_id.to_string(), turn))
            .map(String::as_str)
            .ok_or_else(|| GatewayError::MissingFixture {
                sample_id: sample_id.to_string(),
                turn,
            })
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        conversation: &Conversation,
        _settings: &GenerationSettings,
    ) -> Result<String, GatewayError> {
        check_awaiting_reply(conversation)?;
        let sample_id = conversation
            .sample_id
            .as_deref()
            .ok_or(GatewayError::MissingSampleId)?;
        self.reply(sample_id, conversation.turn_index())
            .map(str::to_owned)
    }
}
