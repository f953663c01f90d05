use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{Featurizer, HASH_FUNCTION_ID};
use super::loss::{prepare_batch, prepared_gradient, prepared_loss, prepared_margin, PreparedPair};
use super::policy::{ReferencePolicy, ToyPolicy};
use super::DpoError;
use crate::jsonl;
use crate::prefset::SelfCorSet;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Extra responses added to every pair's normalizing candidate set.
    pub distractors: Vec<String>,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 10.0,
            epochs: 3,
            batch_size: 8,
            seed: 0,
            feature_dim: 4096,
            init_scale: 1e-3,
            distractors: Vec::new(),
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        let bad = |msg: &str| Err(DpoError::Config(msg.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(DpoError::NonPositiveBeta(self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be a positive integer");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be a positive integer");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be non-negative");
        }
        Ok(())
    }

    /// Seeded starting weights; the same for every run with this config.
    pub fn initial_policy(&self) -> ToyPolicy {
        let mut rng = SeededRng::new(derive_seed(self.seed, "init"));
        let mut policy = ToyPolicy::zeros(Featurizer::new(self.feature_dim));
        for w in policy.weights_mut() {
            *w = rng.symmetric(self.init_scale);
        }
        policy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMargin {
    pub sample_id: String,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pairs: usize,
    /// Mean loss over the whole set before any update (ln 2 when starting at the reference).
    pub initial_loss: f64,
    /// Mean loss over the whole set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_margins: Vec<PairMargin>,
    pub positive_margin_fraction: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Mini-batch gradient descent from the configured initial policy, which is
/// also frozen as the reference.
pub fn train(set: &SelfCorSet, config: &DpoConfig) -> Result<(ToyPolicy, TrainReport), DpoError> {
    config.validate()?;
    let initial = config.initial_policy();
    let reference = ReferencePolicy::freeze(initial.clone());
    train_from(initial, &reference, set, config)
}

/// Train starting at `policy` against a caller-held reference.
pub fn train_from(
    mut policy: ToyPolicy,
    reference: &ReferencePolicy,
    set: &SelfCorSet,
    config: &DpoConfig,
) -> Result<(ToyPolicy, TrainReport), DpoError> {
    config.validate()?;
    if set.is_empty() {
        return Err(DpoError::EmptyDataset);
    }
    let prepared = prepare_batch(&set.pairs, &policy.featurizer(), &config.distractors);
    let initial_loss = prepared_loss(&policy, reference, &prepared, config.beta)?;
    let mut order_rng = SeededRng::new(derive_seed(config.seed, "batches"));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch: Vec<PreparedPair> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        let order = order_rng.permutation(prepared.len());
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| prepared[i].clone()));
            let grad = prepared_gradient(&policy, reference, &batch, config.beta)?;
            for (w, g) in policy.weights_mut().iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
        }
        epoch_losses.push(prepared_loss(&policy, reference, &prepared, config.beta)?);
    }
    let final_margins: Vec<PairMargin> = prepared
        .iter()
        .map(|p| PairMargin {
            sample_id: p.sample_id.clone(),
            margin: prepared_margin(&policy, reference, p, config.beta),
        })
        .collect();
    let positive = final_margins.iter().filter(|m| m.margin > 0.0).count();
    let report = TrainReport {
        pairs: prepared.len(),
        initial_loss,
        epoch_losses,
        positive_margin_fraction: positive as f64 / final_margins.len() as f64,
        final_margins,
    };
    Ok((policy, report))
}

pub const POLICY_FORMAT: &str = "scl-toy-policy/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub format: String,
    pub feature_dim: usize,
    pub hash_function: String,
    pub seed: u64,
    pub config: DpoConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsLine {
    weights: Vec<f64>,
}

/// Header line, then one line holding the weight vector.
pub fn policy_to_string(policy: &ToyPolicy, config: &DpoConfig) -> String {
    let header = PolicyHeader {
        format: POLICY_FORMAT.into(),
        feature_dim: policy.dim(),
        hash_function: HASH_FUNCTION_ID.into(),
        seed: config.seed,
        config: config.clone(),
    };
    let weights = WeightsLine {
        weights: policy.weights().to_vec(),
    };
    format!(
        "{}\n{}\n",
        serde_json::to_string(&header).expect("header serializes"),
        serde_json::to_string(&weights).expect("weights serialize")
    )
}

pub fn parse_policy(text: &str) -> Result<(ToyPolicy, PolicyHeader), DpoError> {
    let mut lines = jsonl::numbered_lines(text);
    let malformed = |line: usize, detail: String| DpoError::PolicyFile { line, detail };
    let (l1, raw) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?;
    let header: PolicyHeader = jsonl::parse_line(raw).map_err(|e| malformed(l1, e.to_string()))?;
    if header.format != POLICY_FORMAT || header.hash_function != HASH_FUNCTION_ID {
        return Err(malformed(
            l1,
            "unsupported policy format or hash function".into(),
        ));
    }
    let (l2, raw) = lines
        .next()
        .ok_or_else(|| malformed(2, "missing weights".into()))?;
    let w: WeightsLine = jsonl::parse_line(raw).map_err(|e| malformed(l2, e.to_string()))?;
    if w.weights.len() != header.feature_dim {
        return Err(malformed(
            l2,
            format!(
                "expected {} weights, found {}",
                header.feature_dim,
                w.weights.len()
            ),
        ));
    }
    Ok((ToyPolicy::from_weights(w.weights), header))
}

pub fn write_policy(policy: &ToyPolicy, config: &DpoConfig, path: &Path) -> std::io::Result<()> {
    jsonl::write_atomic(path, policy_to_string(policy, config).as_bytes())
}

pub fn read_policy(path: &Path) -> Result<(ToyPolicy, PolicyHeader), DpoError> {
    let text = std::fs::read_to_string(path).map_err(|e| DpoError::PolicyFile {
        line: 0,
        detail: format!("{}: {e}", path.display()),
    })?;
    parse_policy(&text)
}
