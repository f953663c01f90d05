//! The preference objective.
//!
//! For a pair with preferred response `c` and disfavored response `r`:
//!
//! ```text
//! f    = β · [(log π_θ(c) − log π_ref(c)) − (log π_θ(r) − log π_ref(r))]
//! L    = mean over pairs of −log σ(f) = softplus(−f)
//! ∂L/∂θ = mean over pairs of −σ(−f) · β · (∇log π_θ(c) − ∇log π_θ(r))
//! ```
//!
//! With linear scores, `∇log π_θ(k) = φ_k − E_π[φ]`; the expectation term is
//! shared by `c` and `r`, so the bracket reduces to `φ_c − φ_r` whatever the
//! candidate set.

use super::features::{Featurizer, SparseVec};
use super::policy::{ReferencePolicy, ToyPolicy};
use super::DpoError;
use crate::prefset::PreferencePair;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A pair's candidate responses, featurized once. Index 0 is the preferred
/// response, index 1 the disfavored one, then any distractors.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub sample_id: String,
    candidates: Vec<SparseVec>,
}

impl PreparedPair {
    pub fn new(pair: &PreferencePair, featurizer: &Featurizer, distractors: &[String]) -> Self {
        let context = pair.context();
        let mut texts: Vec<&str> = vec![&pair.preferred, &pair.disfavored];
        for d in distractors {
            if !texts.contains(&d.as_str()) {
                texts.push(d);
            }
        }
        Self {
            sample_id: pair.sample_id.clone(),
            candidates: texts
                .iter()
                .map(|t| featurizer.features(&context, t))
                .collect(),
        }
    }

    pub fn candidates(&self) -> &[SparseVec] {
        &self.candidates
    }

    /// (log π(preferred), log π(disfavored)) under `policy`.
    pub fn pair_log_probs(&self, policy: &ToyPolicy) -> (f64, f64) {
        let lp = policy.log_probs_of(&self.candidates);
        (lp[0], lp[1])
    }
}

pub fn prepare_batch(
    pairs: &[PreferencePair],
    featurizer: &Featurizer,
    distractors: &[String],
) -> Vec<PreparedPair> {
    pairs
        .iter()
        .map(|p| PreparedPair::new(p, featurizer, distractors))
        .collect()
}

fn check_beta(beta: f64) -> Result<(), DpoError> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(DpoError::NonPositiveBeta(beta))
    }
}

fn check_dims(policy: &ToyPolicy, reference: &ReferencePolicy) -> Result<(), DpoError> {
    if policy.dim() != reference.policy().dim() {
        return Err(DpoError::DimensionMismatch {
            policy: policy.dim(),
            reference: reference.policy().dim(),
        });
    }
    Ok(())
}

/// Margin `f` for one prepared pair.
pub fn prepared_margin(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    pair: &PreparedPair,
    beta: f64,
) -> f64 {
    let (pc, pr) = pair.pair_log_probs(policy);
    let (rc, rr) = pair.pair_log_probs(reference.policy());
    beta * ((pc - rc) - (pr - rr))
}

/// Margin `f` for a pair; `distractors` join the normalizing candidate set.
pub fn dpo_margin(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    pair: &PreferencePair,
    beta: f64,
    distractors: &[String],
) -> Result<f64, DpoError> {
    check_beta(beta)?;
    check_dims(policy, reference)?;
    let prepared = PreparedPair::new(pair, &policy.featurizer(), distractors);
    Ok(prepared_margin(policy, reference, &prepared, beta))
}

pub fn prepared_loss(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    batch: &[PreparedPair],
    beta: f64,
) -> Result<f64, DpoError> {
    check_beta(beta)?;
    check_dims(policy, reference)?;
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let total: f64 = batch
        .iter()
        .map(|p| softplus(-prepared_margin(policy, reference, p, beta)))
        .sum();
    Ok(total / batch.len() as f64)
}

pub fn prepared_gradient(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    batch: &[PreparedPair],
    beta: f64,
) -> Result<Vec<f64>, DpoError> {
    check_beta(beta)?;
    check_dims(policy, reference)?;
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let mut grad = vec![0.0; policy.dim()];
    let n = batch.len() as f64;
    for p in batch {
        let f = prepared_margin(policy, reference, p, beta);
        let scale = -sigmoid(-f) * beta / n;
        p.candidates[0].add_scaled_to(&mut grad, scale);
        p.candidates[1].add_scaled_to(&mut grad, -scale);
    }
    Ok(grad)
}

/// Mean of `softplus(−f)` over the batch.
pub fn dpo_loss(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    batch: &[PreferencePair],
    beta: f64,
    distractors: &[String],
) -> Result<f64, DpoError> {
    let prepared = prepare_batch(batch, &policy.featurizer(), distractors);
    prepared_loss(policy, reference, &prepared, beta)
}

/// Analytic gradient of [`dpo_loss`] with respect to the policy weights.
pub fn dpo_gradient(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    batch: &[PreferencePair],
    beta: f64,
    distractors: &[String],
) -> Result<Vec<f64>, DpoError> {
    let prepared = prepare_batch(batch, &policy.featurizer(), distractors);
    prepared_gradient(policy, reference, &prepared, beta)
}

/// Central differences `(g(x + h·eᵢ) − g(x − h·eᵢ)) / 2h` for every coordinate.
pub fn central_difference(g: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = g(&probe);
            probe[i] = x[i] - h;
            let down = g(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Numerical gradient of [`dpo_loss`] by central differences.
pub fn finite_diff_gradient(
    policy: &ToyPolicy,
    reference: &ReferencePolicy,
    batch: &[PreferencePair],
    beta: f64,
    distractors: &[String],
    h: f64,
) -> Result<Vec<f64>, DpoError> {
    if h <= 0.0 || !h.is_finite() {
        return Err(DpoError::NonPositiveStep(h));
    }
    let prepared = prepare_batch(batch, &policy.featurizer(), distractors);
    // Surface config errors before probing.
    prepared_loss(policy, reference, &prepared, beta)?;
    let loss_at = |w: &[f64]| {
        let probe = ToyPolicy::from_weights(w.to_vec());
        prepared_loss(&probe, reference, &prepared, beta).expect("validated above")
    };
    Ok(central_difference(loss_at, policy.weights(), h))
}
