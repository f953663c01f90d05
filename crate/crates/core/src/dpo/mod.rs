//! Desk-scale preference optimization.
//!
//! A linear softmax policy over a small candidate set stands in for a
//! vision-language model: `log π(R | Q, I)` is the log-softmax of hashed
//! feature scores. The loss, its analytic gradient, a central-difference
//! oracle, and a deterministic trainer with a frozen reference policy live
//! here.

mod features;
mod loss;
mod policy;
mod train;

pub use features::{tokenize, Featurizer, SparseVec, HASH_FUNCTION_ID};
pub use loss::{
    central_difference, dpo_gradient, dpo_loss, dpo_margin, finite_diff_gradient, prepare_batch,
    prepared_gradient, prepared_loss, prepared_margin, sigmoid, softplus, PreparedPair,
};
pub use policy::{log_softmax, ReferencePolicy, ToyPolicy};
pub use train::{
    parse_policy, policy_to_string, read_policy, train, train_from, write_policy, DpoConfig,
    PairMargin, PolicyHeader, TrainReport, POLICY_FORMAT,
};

use crate::corpus::Choice;

#[derive(Debug, thiserror::Error)]
pub enum DpoError {
    #[error("response is not among the candidates")]
    NotACandidate,
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("preference dataset is empty")]
    EmptyDataset,
    #[error("policy has {policy} weights but reference has {reference}")]
    DimensionMismatch { policy: usize, reference: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("policy file line {line}: {detail}")]
    PolicyFile { line: usize, detail: String },
}

/// The text a policy conditions on: question plus `<label>. <text>` lines.
pub fn render_context(question: &str, choices: &[Choice]) -> String {
    let mut out = question.trim_end().to_string();
    for c in choices {
        out.push('\n');
        out.push_str(&c.label);
        out.push_str(". ");
        out.push_str(&c.text);
    }
    out
}
