//! Chat-style model access.
//!
//! [`ChatBackend`] is the single seam between the self-correction engine and a
//! model. [`HttpBackend`] talks to a chat-completions-compatible server;
//! [`ScriptedBackend`] replays recorded texts keyed by `(sample_id, turn)`.

mod http;
mod scripted;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{FixtureEntry, FixtureError, ScriptedBackend};

use serde::{Deserialize, Serialize};

use crate::corpus::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            parts: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConversationError {
    #[error("turn {index}: assistant turns may only carry text")]
    AssistantImage { index: usize },
    #[error("turn {index}: more than one image in the conversation")]
    ExtraImage { index: usize },
    #[error("turn {index}: expected a {expected:?} turn, found {found:?}")]
    OutOfOrder {
        index: usize,
        expected: Role,
        found: Role,
    },
}

/// Ordered turns plus the sample they belong to. The sample id and the
/// number of assistant turns so far key scripted fixtures.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Conversation {
    pub sample_id: Option<String>,
    turns: Vec<ChatTurn>,
}

impl Conversation {
    pub fn new(sample_id: Option<String>) -> Self {
        Self {
            sample_id,
            turns: Vec::new(),
        }
    }

    /// Build from turns, checking the role and image rules.
    pub fn from_turns(
        sample_id: Option<String>,
        turns: Vec<ChatTurn>,
    ) -> Result<Self, ConversationError> {
        let mut c = Self::new(sample_id);
        for t in turns {
            c.push(t)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, turn: ChatTurn) -> Result<(), ConversationError> {
        let index = self.turns.len();
        if turn.role == Role::Assistant && turn.image_count() > 0 {
            return Err(ConversationError::AssistantImage { index });
        }
        if self.image_count() + turn.image_count() > 1 {
            return Err(ConversationError::ExtraImage { index });
        }
        let leading_system = self.turns.first().is_some_and(|t| t.role == Role::System);
        let expected = match (index, turn.role) {
            (0, Role::System) => Role::System,
            _ => {
                let offset = usize::from(leading_system);
                if (index - offset).is_multiple_of(2) {
                    Role::User
                } else {
                    Role::Assistant
                }
            }
        };
        if turn.role != expected {
            return Err(ConversationError::OutOfOrder {
                index,
                expected,
                found: turn.role,
            });
        }
        self.turns.push(turn);
        Ok(())
    }

    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }

    pub fn image_count(&self) -> usize {
        self.turns.iter().map(ChatTurn::image_count).sum()
    }

    /// Number of assistant replies already in the history; the index of the
    /// reply the next completion will produce.
    pub fn turn_index(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .count()
    }

    pub fn last_role(&self) -> Option<Role> {
        self.turns.last().map(|t| t.role)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    /// 0 requests greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            model_id: "scripted".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("conversation must end with a user turn")]
    NotAwaitingReply,
    #[error("invalid generation settings: {0}")]
    Settings(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no fixture entry for ({sample_id:?}, {turn})")]
    MissingFixture { sample_id: String, turn: usize },
    #[error("conversation carries no sample id; scripted replies need one")]
    MissingSampleId,
    #[error("reading image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing credential: environment variable {0} is not set")]
    Credential(String),
}

impl GatewayError {
    /// Errors that originate from talking to the backend rather than from
    /// malformed input.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport { .. }
                | GatewayError::Status { .. }
                | GatewayError::EmptyCompletion
                | GatewayError::Protocol(_)
                | GatewayError::Credential(_)
        )
    }
}

pub trait ChatBackend: Send + Sync {
    /// Produce the assistant reply to a conversation whose last turn is a user turn.
    fn complete(
        &self,
        conversation: &Conversation,
        settings: &GenerationSettings,
    ) -> Result<String, GatewayError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, c: &Conversation, s: &GenerationSettings) -> Result<String, GatewayError> {
        (**self).complete(c, s)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, c: &Conversation, s: &GenerationSettings) -> Result<String, GatewayError> {
        (**self).complete(c, s)
    }
}

pub(crate) fn check_awaiting_reply(conversation: &Conversation) -> Result<(), GatewayError> {
    if conversation.last_role() != Some(Role::User) {
        return Err(GatewayError::NotAwaitingReply);
    }
    Ok(())
}
