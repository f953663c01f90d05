//! Synthetic corpora and scripted model behaviour.
//!
//! The real benchmarks are not redistributed, so tests and demos run on
//! generated multiple-choice questions whose answers follow a fixed
//! subject → answer table, plus a simulated model whose initial and refined
//! answers follow seeded correctness transitions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_to_lines, Choice, ImageKind, ImageRef, McqSample};
use crate::dpo::DpoConfig;
use crate::gateway::{GenerationSettings, ScriptedBackend};
use crate::grading::TransitionType;
use crate::jsonl;
use crate::pipeline::{BackendConfig, CorpusSource, PipelineConfig};
use crate::rng::{derive_seed, SeededRng};
use crate::selfcorrect::CorrectionPromptId;

struct Family {
    template: &'static str,
    facts: &'static [(&'static str, &'static str)],
}

const FAMILIES: &[Family] = &[
    Family {
        template: "What colour is the {} in the image?",
        facts: &[
            ("kettle", "red"),
            ("bicycle", "blue"),
            ("umbrella", "yellow"),
            ("sofa", "green"),
            ("lamp", "white"),
            ("boat", "orange"),
            ("tractor", "purple"),
            ("mailbox", "black"),
        ],
    },
    Family {
        template: "Which shape best describes the {} shown?",
        facts: &[
            ("tabletop", "circle"),
            ("window", "square"),
            ("roof", "triangle"),
            ("rug", "rectangle"),
            ("sign", "hexagon"),
            ("mirror", "oval"),
        ],
    },
    Family {
        template: "Where is the {} most likely located?",
        facts: &[
            ("stove", "kitchen"),
            ("bathtub", "bathroom"),
            ("bunkbed", "bedroom"),
            ("whiteboard", "classroom"),
            ("treadmill", "gym"),
            ("checkout", "supermarket"),
        ],
    },
];

const LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// A generated corpus of `n` questions with four choices each, ids `syn-0000`….
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<McqSample> {
    let mut rng = SeededRng::new(derive_seed(seed, "corpus"));
    (0..n)
        .map(|i| {
            let family = &FAMILIES[rng.below(FAMILIES.len() as u64) as usize];
            let (subject, answer) = family.facts[rng.below(family.facts.len() as u64) as usize];
            let mut options: Vec<&str> = family
                .facts
                .iter()
                .map(|(_, a)| *a)
                .filter(|a| *a != answer)
                .collect();
            rng.shuffle(&mut options);
            options.truncate(LABELS.len() - 1);
            options.push(answer);
            rng.shuffle(&mut options);
            let key = options.iter().position(|o| *o == answer).unwrap();
            McqSample {
                id: format!("syn-{i:04}"),
                source: "synthetic".into(),
                question: family.template.replace("{}", subject),
                image: ImageRef {
                    kind: ImageKind::Url,
                    value: format!("synthetic://images/{i:04}.png"),
                },
                choices: LABELS
                    .iter()
                    .zip(&options)
                    .map(|(l, t)| Choice::new(*l, *t))
                    .collect(),
                answer_key: LABELS[key].to_string(),
            }
        })
        .collect()
}

/// Probabilities driving the simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderProfile {
    /// Chance the initial answer is correct.
    pub initial_accuracy: f64,
    /// Chance a correct answer is changed to a wrong one on refinement.
    pub break_rate: f64,
    /// Chance a wrong answer is fixed on refinement.
    pub fix_rate: f64,
    /// Chance a response gives no extractable answer.
    pub unparseable_rate: f64,
}

impl Default for ResponderProfile {
    fn default() -> Self {
        Self {
            initial_accuracy: 0.6,
            break_rate: 0.3,
            fix_rate: 0.4,
            unparseable_rate: 0.02,
        }
    }
}

const UNPARSEABLE: &str = "I cannot determine this from the image.";

const LEADS: [&str; 3] = [
    "Looking at the image,",
    "Upon reviewing my previous answer,",
    "After a closer look,",
];

/// Phrasings seen in real model output; every one is extractable.
fn phrase(lead: &str, variant: u64, choice: &Choice) -> String {
    let (l, t) = (&choice.label, &choice.text);
    match variant {
        0 => format!("{lead} the answer is {l}. {t}"),
        1 => format!("{lead} I believe the correct answer is **{l}**. {t}"),
        2 => format!("{lead} I would pick this option.\n{l}. {t}"),
        _ => format!("{lead} the final answer is {l} ({t})."),
    }
}

/// Text of a reply choosing `choice`, with lead and phrasing drawn from `rng`.
pub fn reply_for(rng: &mut SeededRng, choice: &Choice) -> String {
    let lead = LEADS[rng.below(LEADS.len() as u64) as usize];
    let variant = rng.below(4);
    phrase(lead, variant, choice)
}

fn wrong_choice<'a>(rng: &mut SeededRng, sample: &'a McqSample) -> &'a Choice {
    let wrong: Vec<&Choice> = sample
        .choices
        .iter()
        .filter(|c| c.label != sample.answer_key)
        .collect();
    wrong[rng.below(wrong.len() as u64) as usize]
}

/// Scripted replies for `k_turns` refinements of every sample.
pub fn simulate_responses(
    samples: &[McqSample],
    profile: &ResponderProfile,
    k_turns: usize,
    seed: u64,
) -> ScriptedBackend {
    let mut backend = ScriptedBackend::new();
    for s in samples {
        let mut rng = SeededRng::new(derive_seed(seed, &s.id));
        let key = s.choice(&s.answer_key).expect("validated sample");
        let mut correct = rng.chance(profile.initial_accuracy);
        for turn in 0..=k_turns {
            if turn > 0 {
                correct = if correct {
                    !rng.chance(profile.break_rate)
                } else {
                    rng.chance(profile.fix_rate)
                };
            }
            let text = if rng.chance(profile.unparseable_rate) {
                UNPARSEABLE.to_string()
            } else if correct {
                reply_for(&mut rng, key)
            } else {
                let c = wrong_choice(&mut rng, s);
                reply_for(&mut rng, c)
            };
            backend.insert(&s.id, turn, text);
        }
    }
    backend
}

/// Samples plus single-refinement replies engineered to produce exactly the
/// requested number of records per transition type.
pub fn transition_fixture(
    counts: &[(TransitionType, usize)],
    seed: u64,
) -> (Vec<McqSample>, ScriptedBackend) {
    let total: usize = counts.iter().map(|(_, n)| n).sum();
    let samples = synthetic_corpus(total, seed);
    let mut backend = ScriptedBackend::new();
    let mut rng = SeededRng::new(derive_seed(seed, "transitions"));
    let mut it = samples.iter();
    for &(t, n) in counts {
        for _ in 0..n {
            let s = it.next().expect("sized above");
            let key = s.choice(&s.answer_key).expect("validated sample");
            let ir_wrong = wrong_choice(&mut rng, s);
            let rr_wrong = wrong_choice(&mut rng, s);
            let (ir, rr) = match t {
                TransitionType::Type1 => (reply_for(&mut rng, key), reply_for(&mut rng, key)),
                TransitionType::Type2 => (reply_for(&mut rng, ir_wrong), reply_for(&mut rng, key)),
                TransitionType::Type3 => (reply_for(&mut rng, key), reply_for(&mut rng, rr_wrong)),
                TransitionType::Type4 => {
                    (reply_for(&mut rng, ir_wrong), reply_for(&mut rng, rr_wrong))
                }
                TransitionType::Undetermined => (UNPARSEABLE.to_string(), reply_for(&mut rng, key)),
            };
            backend.insert(&s.id, 0, ir);
            backend.insert(&s.id, 1, rr);
        }
    }
    (samples, backend)
}

/// A self-contained synthetic experiment on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub samples: usize,
    pub eval_count: usize,
    pub seed: u64,
    pub k_turns: usize,
    pub profile: ResponderProfile,
    pub dpo: DpoConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            samples: 500,
            eval_count: 100,
            seed: 0,
            k_turns: 1,
            profile: ResponderProfile::default(),
            dpo: DpoConfig::default(),
        }
    }
}

pub const EXPERIMENT_CONFIG: &str = "config.toml";
pub const EXPERIMENT_CORPUS: &str = "corpus.jsonl";
pub const EXPERIMENT_FIXTURE: &str = "fixture.jsonl";

/// Write `corpus.jsonl`, `fixture.jsonl` and `config.toml` (scripted backend,
/// output under `out/`) into `dir`. Returns the config path.
pub fn write_experiment(dir: &Path, spec: &ExperimentSpec) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let samples = synthetic_corpus(spec.samples, spec.seed);
    let backend = simulate_responses(&samples, &spec.profile, spec.k_turns, spec.seed);
    jsonl::write_atomic(
        &dir.join(EXPERIMENT_CORPUS),
        corpus_to_lines(&samples).as_bytes(),
    )?;
    jsonl::write_atomic(&dir.join(EXPERIMENT_FIXTURE), backend.to_lines().as_bytes())?;
    let cfg = PipelineConfig {
        out_dir: "out".into(),
        prompt_id: CorrectionPromptId::VP1,
        k_turns: spec.k_turns,
        allow_extra_turns: spec.k_turns > crate::selfcorrect::MAX_TURNS,
        split_seed: spec.seed,
        subset_seed: spec.seed,
        parallelism: 4,
        p_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        corpus: vec![CorpusSource {
            path: EXPERIMENT_CORPUS.into(),
            eval_count: spec.eval_count,
        }],
        backend: Some(BackendConfig::Scripted {
            fixture: EXPERIMENT_FIXTURE.into(),
        }),
        generation: GenerationSettings::default(),
        dpo: spec.dpo.clone(),
    };
    let path = dir.join(EXPERIMENT_CONFIG);
    let text = toml::to_string(&cfg).expect("config serializes");
    jsonl::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
