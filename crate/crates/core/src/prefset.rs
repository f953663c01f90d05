//! Preference dataset construction from self-correction records.
//!
//! Only records whose first refinement flipped correctness contribute:
//! an incorrect→correct record prefers its refined response, a
//! correct→incorrect record prefers its initial response. The other side
//! of the record is the disfavored response.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Choice, ImageRef, McqSample};
use crate::grading::{self, TransitionType, TypeCounts, RULES_VERSION};
use crate::jsonl;
use crate::rng::SeededRng;
use crate::selfcorrect::{CorrectionPromptId, SelfCorrectionRecord};

pub const SET_FORMAT: &str = "scl-selfcorset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseOrigin {
    IR,
    RR,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub sample_id: String,
    pub source: String,
    pub question: String,
    pub image: ImageRef,
    pub choices: Vec<Choice>,
    pub answer_key: String,
    pub preferred: String,
    pub disfavored: String,
    pub transition: TransitionType,
    pub preferred_origin: ResponseOrigin,
    pub prompt_id: CorrectionPromptId,
    pub model_id: String,
}

impl PreferencePair {
    /// Pair invariants: allowed transition, consistent origin, and correct
    /// polarity under the current extraction rules.
    pub fn check(&self) -> Result<(), String> {
        match (self.transition, self.preferred_origin) {
            (TransitionType::Type2, ResponseOrigin::RR)
            | (TransitionType::Type3, ResponseOrigin::IR) => {}
            (TransitionType::Type2 | TransitionType::Type3, origin) => {
                return Err(format!(
                    "preferred_origin {origin:?} inconsistent with transition {}",
                    self.transition.name()
                ))
            }
            _ => return Err("transition not in {Type2, Type3}".into()),
        }
        let preferred = grading::extract_choice(&self.preferred, &self.choices);
        if !grading::grade(&preferred, &self.answer_key) {
            return Err("preferred response does not grade correct".into());
        }
        let disfavored = grading::extract_choice(&self.disfavored, &self.choices);
        if grading::grade(&disfavored, &self.answer_key) {
            return Err("disfavored response grades correct".into());
        }
        Ok(())
    }

    /// Question text with its choice lines; the context a policy conditions on.
    pub fn context(&self) -> String {
        crate::dpo::render_context(&self.question, &self.choices)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetInfo {
    pub fraction: f64,
    pub seed: u64,
    pub parent_pairs: usize,
}

/// First line of a set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMeta {
    pub format: String,
    pub model_id: String,
    pub prompt_id: CorrectionPromptId,
    pub rules_version: String,
    pub seed: u64,
    /// Transition counts over the records the set was built from.
    pub counts: TypeCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCorSet {
    pub meta: SetMeta,
    /// Sorted by sample id, ids unique.
    pub pairs: Vec<PreferencePair>,
}

impl SelfCorSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check(&self) -> Result<(), (usize, String)> {
        let mut ids = HashSet::new();
        for (i, p) in self.pairs.iter().enumerate() {
            p.check().map_err(|e| (i, e))?;
            if !ids.insert(&p.sample_id) {
                return Err((i, format!("duplicate sample_id {:?}", p.sample_id)));
            }
            if i > 0 && self.pairs[i - 1].sample_id > p.sample_id {
                return Err((i, "pairs not sorted by sample_id".into()));
            }
        }
        let expected = match &self.meta.subset {
            None => self.meta.counts.type2 + self.meta.counts.type3,
            Some(s) => subset_size(s.parent_pairs, s.fraction),
        };
        if expected != self.pairs.len() {
            return Err((
                self.pairs.len(),
                format!(
                    "header expects {expected} pairs, found {}",
                    self.pairs.len()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PrefsetError {
    #[error("record {sample_id:?} has no matching corpus sample")]
    UnknownSample { sample_id: String },
    #[error("duplicate record for sample {sample_id:?}")]
    DuplicateRecord { sample_id: String },
    #[error("set file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("set file line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("set file line {line}: {detail}")]
    Invariant { line: usize, detail: String },
    #[error("subset fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
}

/// Corpus samples by id.
pub type CorpusIndex = BTreeMap<String, McqSample>;

pub fn index_corpus<'a>(samples: impl IntoIterator<Item = &'a McqSample>) -> CorpusIndex {
    samples
        .into_iter()
        .map(|s| (s.id.clone(), s.clone()))
        .collect()
}

/// Provenance stamped into the set header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildInfo {
    pub model_id: String,
    pub prompt_id: CorrectionPromptId,
    pub seed: u64,
}

/// One pair per incorrect→correct or correct→incorrect record. Turns 0 and 1
/// are re-graded against the corpus sample, so pairs always satisfy the
/// polarity invariant under the current rules.
pub fn build_preference_pairs(
    records: &[SelfCorrectionRecord],
    samples: &CorpusIndex,
    info: &BuildInfo,
) -> Result<SelfCorSet, PrefsetError> {
    let mut counts = TypeCounts::default();
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for r in records {
        let sample = samples
            .get(&r.sample_id)
            .ok_or_else(|| PrefsetError::UnknownSample {
                sample_id: r.sample_id.clone(),
            })?;
        if !seen.insert(r.sample_id.as_str()) {
            return Err(PrefsetError::DuplicateRecord {
                sample_id: r.sample_id.clone(),
            });
        }
        let ir = r.initial_response();
        let rr = r.first_refinement();
        let transition = grading::classify_transition(
            &grading::extract_choice(ir, &sample.choices),
            &grading::extract_choice(rr, &sample.choices),
            &sample.answer_key,
        );
        counts.add(transition);
        let (preferred, disfavored, origin) = match transition {
            TransitionType::Type2 => (rr, ir, ResponseOrigin::RR),
            TransitionType::Type3 => (ir, rr, ResponseOrigin::IR),
            _ => continue,
        };
        pairs.push(PreferencePair {
            sample_id: sample.id.clone(),
            source: sample.source.clone(),
            question: sample.question.clone(),
            image: sample.image.clone(),
            choices: sample.choices.clone(),
            answer_key: sample.answer_key.clone(),
            preferred: preferred.to_string(),
            disfavored: disfavored.to_string(),
            transition,
            preferred_origin: origin,
            prompt_id: r.prompt_id,
            model_id: info.model_id.clone(),
        });
    }
    pairs.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(SelfCorSet {
        meta: SetMeta {
            format: SET_FORMAT.into(),
            model_id: info.model_id.clone(),
            prompt_id: info.prompt_id,
            rules_version: RULES_VERSION.into(),
            seed: info.seed,
            counts,
            subset: None,
        },
        pairs,
    })
}

pub fn selfcorset_to_string(set: &SelfCorSet) -> String {
    let mut out = serde_json::to_string(&set.meta).expect("meta serializes");
    out.push('\n');
    out.push_str(&jsonl::to_lines(&set.pairs).expect("pairs serialize"));
    out
}

pub fn parse_selfcorset(text: &str) -> Result<SelfCorSet, PrefsetError> {
    let mut lines = jsonl::numbered_lines(text);
    let (meta_line, raw) = lines.next().ok_or(PrefsetError::Malformed {
        line: 1,
        detail: "missing metadata record".into(),
    })?;
    let meta: SetMeta = jsonl::parse_line(raw).map_err(|e| PrefsetError::Malformed {
        line: meta_line,
        detail: e.to_string(),
    })?;
    if meta.format != SET_FORMAT {
        return Err(PrefsetError::Malformed {
            line: meta_line,
            detail: format!("unsupported set format {:?}", meta.format),
        });
    }
    let mut pairs = Vec::new();
    let mut line_of = Vec::new();
    for (line, raw) in lines {
        let pair: PreferencePair = jsonl::parse_line(raw).map_err(|e| PrefsetError::Malformed {
            line,
            detail: e.to_string(),
        })?;
        pairs.push(pair);
        line_of.push(line);
    }
    let set = SelfCorSet { meta, pairs };
    set.check().map_err(|(i, detail)| PrefsetError::Invariant {
        line: line_of.get(i).copied().unwrap_or(meta_line),
        detail,
    })?;
    Ok(set)
}

pub fn write_selfcorset(set: &SelfCorSet, path: &Path) -> Result<(), PrefsetError> {
    jsonl::write_atomic(path, selfcorset_to_string(set).as_bytes()).map_err(|source| {
        PrefsetError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}

pub fn read_selfcorset(path: &Path) -> Result<SelfCorSet, PrefsetError> {
    let text = std::fs::read_to_string(path).map_err(|source| PrefsetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_selfcorset(&text)
}

/// `⌊fraction · n⌋`, with a small allowance so products such as `0.29 · 100`
/// that land a hair below an integer still count as that integer.
pub fn subset_size(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) + 1e-9).floor() as usize).min(n)
}

/// Seeded shuffle of the pairs, keep the first `⌊p·N⌋`, re-sort by id.
/// With a shared seed, smaller fractions give prefixes of larger ones.
pub fn subset(set: &SelfCorSet, fraction: f64, seed: u64) -> Result<SelfCorSet, PrefsetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PrefsetError::FractionOutOfRange(fraction));
    }
    let n = set.pairs.len();
    let order = SeededRng::new(seed).permutation(n);
    let mut pairs: Vec<PreferencePair> = order[..subset_size(n, fraction)]
        .iter()
        .map(|&i| set.pairs[i].clone())
        .collect();
    pairs.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut meta = set.meta.clone();
    meta.subset = Some(SubsetInfo {
        fraction,
        seed,
        parent_pairs: n,
    });
    Ok(SelfCorSet { meta, pairs })
}
