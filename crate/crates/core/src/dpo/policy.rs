use super::features::{Featurizer, SparseVec};
use super::DpoError;

/// Log-softmax with max subtraction.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Linear scores over a candidate set, normalized with a softmax:
/// `π(r | x) = exp(θ·φ(x, r)) / Σ_r' exp(θ·φ(x, r'))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    weights: Vec<f64>,
    featurizer: Featurizer,
}

impl ToyPolicy {
    pub fn zeros(featurizer: Featurizer) -> Self {
        Self {
            weights: vec![0.0; featurizer.dim()],
            featurizer,
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        let featurizer = Featurizer::new(weights.len());
        Self {
            weights,
            featurizer,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn featurizer(&self) -> Featurizer {
        self.featurizer
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, context: &str, response: &str) -> f64 {
        self.featurizer
            .features(context, response)
            .dot(&self.weights)
    }

    /// Log-probabilities of every candidate, in candidate order.
    pub fn log_probs(&self, context: &str, candidates: &[&str]) -> Vec<f64> {
        let scores: Vec<f64> = candidates.iter().map(|r| self.score(context, r)).collect();
        log_softmax(&scores)
    }

    pub fn log_prob(
        &self,
        context: &str,
        response: &str,
        candidates: &[&str],
    ) -> Result<f64, DpoError> {
        let pos = candidates
            .iter()
            .position(|c| *c == response)
            .ok_or(DpoError::NotACandidate)?;
        Ok(self.log_probs(context, candidates)[pos])
    }

    /// Log-probabilities over pre-featurized candidates.
    pub fn log_probs_of(&self, candidates: &[SparseVec]) -> Vec<f64> {
        let scores: Vec<f64> = candidates.iter().map(|f| f.dot(&self.weights)).collect();
        log_softmax(&scores)
    }
}

/// Frozen copy of the starting policy. There is no mutable access.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(ToyPolicy);

impl ReferencePolicy {
    pub fn freeze(policy: ToyPolicy) -> Self {
        Self(policy)
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_at_zero() {
        let p = ToyPolicy::zeros(Featurizer::new(16));
        let cands = ["a", "b c", "d e f", "g"];
        for c in cands {
            let lp = p.log_prob("ctx", c, &cands).unwrap();
            assert!((lp - (0.25f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_candidate_is_certain() {
        let p = ToyPolicy::from_weights((0..16).map(|i| i as f64 * 0.3 - 2.0).collect());
        assert_eq!(p.log_prob("ctx", "only", &["only"]).unwrap(), 0.0);
    }

    #[test]
    fn not_a_candidate() {
        let p = ToyPolicy::zeros(Featurizer::new(4));
        assert!(matches!(
            p.log_prob("c", "x", &["y"]),
            Err(DpoError::NotACandidate)
        ));
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let lp = log_softmax(&[1000.0, -1000.0, 999.0]);
        assert!(lp.iter().all(|x| x.is_finite()));
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
