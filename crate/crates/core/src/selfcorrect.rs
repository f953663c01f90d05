//! Two-stage intrinsic self-correction.
//!
//! Stage one asks the standard question (image, question, choice lines, answer
//! format cue). Stage two appends a text-only refinement prompt to the
//! retained history, `k_turns` times. The image is attached once, in the
//! first user turn.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::McqSample;
use crate::gateway::{
    ChatBackend, ChatTurn, ContentPart, Conversation, GatewayError, GenerationSettings, Role,
};
use crate::grading::{self, ParsedLabel, TransitionType, RULES_VERSION};
use crate::jsonl;

/// Refinement turns accepted without an explicit override.
pub const MAX_TURNS: usize = 3;

/// Appended to every standard prompt.
pub const ANSWER_FORMAT_CUE: &str = "Answer with the option's letter/label.";

pub const CRITICAL_PROMPT: &str = "Review your previous answer and find problems with your answer. Based on the problems you found, improve your answer.";
pub const COMPREHENSIVE_DETAIL_PROMPT: &str = "Review your previous answer and ensure that all relevant aspects of the image have been considered. Are there any elements or details that you missed? Based on your review, improve your answer.";
pub const CONTEXTUAL_UNDERSTANDING_PROMPT: &str = "Review your contextual understanding of the image. Have you correctly interpreted the overall context and purpose of the scene? Based on your review, improve your answer.";
pub const SCENE_ANALYSIS_PROMPT: &str = "Review your answer and ensure that your understanding of the image is comprehensive and detailed. Are there any aspects of the scene that you have omitted or misinterpreted? Based on your review, improve your answer.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CorrectionPromptId {
    /// Standard prompt; initial turn only.
    SP,
    /// Critical prompt.
    CP,
    /// Comprehensive detail.
    VP1,
    /// Contextual understanding.
    VP2,
    /// Comprehensive scene analysis.
    VP3,
}

impl CorrectionPromptId {
    pub const REFINEMENT: [CorrectionPromptId; 4] = [
        CorrectionPromptId::CP,
        CorrectionPromptId::VP1,
        CorrectionPromptId::VP2,
        CorrectionPromptId::VP3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionPromptId::SP => "SP",
            CorrectionPromptId::CP => "CP",
            CorrectionPromptId::VP1 => "VP1",
            CorrectionPromptId::VP2 => "VP2",
            CorrectionPromptId::VP3 => "VP3",
        }
    }
}

impl fmt::Display for CorrectionPromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorrectionPromptId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "SP" => Ok(CorrectionPromptId::SP),
            "CP" => Ok(CorrectionPromptId::CP),
            "VP1" => Ok(CorrectionPromptId::VP1),
            "VP2" => Ok(CorrectionPromptId::VP2),
            "VP3" => Ok(CorrectionPromptId::VP3),
            _ => Err(format!(
                "unknown prompt id {s:?} (expected SP, CP, VP1, VP2 or VP3)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("the standard prompt (SP) cannot be used as a refinement prompt")]
pub struct StandardPromptAsRefinement;

pub fn correction_prompt_text(
    id: CorrectionPromptId,
) -> Result<&'static str, StandardPromptAsRefinement> {
    match id {
        CorrectionPromptId::SP => Err(StandardPromptAsRefinement),
        CorrectionPromptId::CP => Ok(CRITICAL_PROMPT),
        CorrectionPromptId::VP1 => Ok(COMPREHENSIVE_DETAIL_PROMPT),
        CorrectionPromptId::VP2 => Ok(CONTEXTUAL_UNDERSTANDING_PROMPT),
        CorrectionPromptId::VP3 => Ok(SCENE_ANALYSIS_PROMPT),
    }
}

/// Question text plus one `<label>. <text>` line per choice and the format cue.
pub fn standard_prompt_text(sample: &McqSample) -> String {
    let mut text = sample.question.trim_end().to_string();
    for c in &sample.choices {
        text.push('\n');
        text.push_str(&c.label);
        text.push_str(". ");
        text.push_str(&c.text);
    }
    text.push('\n');
    text.push_str(ANSWER_FORMAT_CUE);
    text
}

pub fn render_standard_prompt(sample: &McqSample) -> ChatTurn {
    ChatTurn {
        role: Role::User,
        parts: vec![
            ContentPart::Image {
                image: sample.image.clone(),
            },
            ContentPart::Text {
                text: standard_prompt_text(sample),
            },
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfCorrectionRecord {
    pub sample_id: String,
    pub prompt_id: CorrectionPromptId,
    /// Index 0 is the initial response, 1..=K the refinements.
    pub responses: Vec<String>,
    pub parsed_labels: Vec<ParsedLabel>,
    pub correctness: Vec<bool>,
    /// Turn 0 against turn 1.
    pub transition: TransitionType,
}

impl SelfCorrectionRecord {
    /// Grade raw responses against a sample.
    pub fn grade(
        sample: &McqSample,
        prompt_id: CorrectionPromptId,
        responses: Vec<String>,
    ) -> Self {
        assert!(
            responses.len() >= 2,
            "a record needs an initial and a refined response"
        );
        let parsed_labels: Vec<ParsedLabel> = responses
            .iter()
            .map(|r| grading::extract_choice(r, &sample.choices))
            .collect();
        let correctness = parsed_labels
            .iter()
            .map(|p| grading::grade(p, &sample.answer_key))
            .collect();
        let transition =
            grading::classify_transition(&parsed_labels[0], &parsed_labels[1], &sample.answer_key);
        Self {
            sample_id: sample.id.clone(),
            prompt_id,
            responses,
            parsed_labels,
            correctness,
            transition,
        }
    }

    /// Number of refinement turns.
    pub fn k_turns(&self) -> usize {
        self.responses.len() - 1
    }

    pub fn initial_response(&self) -> &str {
        &self.responses[0]
    }

    pub fn first_refinement(&self) -> &str {
        &self.responses[1]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SelfCorrectError {
    #[error(transparent)]
    Prompt(#[from] StandardPromptAsRefinement),
    #[error("k_turns must be at least 1")]
    NoRefinementTurns,
    #[error("sample {sample_id}, turn {turn}: {source}")]
    Gateway {
        sample_id: String,
        turn: usize,
        #[source]
        source: GatewayError,
    },
}

impl SelfCorrectError {
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, SelfCorrectError::Gateway { source, .. } if source.is_backend_failure())
    }
}

/// Run one sample through the initial turn and `k_turns` refinements.
pub fn run_intrinsic_self_correction<B: ChatBackend + ?Sized>(
    backend: &B,
    sample: &McqSample,
    prompt_id: CorrectionPromptId,
    k_turns: usize,
    settings: &GenerationSettings,
) -> Result<SelfCorrectionRecord, SelfCorrectError> {
    let refine = correction_prompt_text(prompt_id)?;
    if k_turns == 0 {
        return Err(SelfCorrectError::NoRefinementTurns);
    }
    let mut conversation = Conversation::new(Some(sample.id.clone()));
    let mut responses = Vec::with_capacity(k_turns + 1);
    for turn in 0..=k_turns {
        let user = if turn == 0 {
            render_standard_prompt(sample)
        } else {
            ChatTurn::user_text(refine)
        };
        conversation
            .push(user)
            .expect("engine only builds alternating single-image conversations");
        let reply = backend
            .complete(&conversation, settings)
            .map_err(|source| SelfCorrectError::Gateway {
                sample_id: sample.id.clone(),
                turn,
                source,
            })?;
        conversation
            .push(ChatTurn::assistant(reply.clone()))
            .expect("assistant reply follows a user turn");
        responses.push(reply);
    }
    Ok(SelfCorrectionRecord::grade(sample, prompt_id, responses))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub message: String,
    pub backend: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    /// Sorted by sample id.
    pub records: Vec<SelfCorrectionRecord>,
    /// Sorted by sample id.
    pub failures: Vec<SampleFailure>,
}

/// Run every sample with up to `parallelism` in flight. Output order is by
/// sample id regardless of scheduling; failures are collected, not fatal.
pub fn run_batch<B: ChatBackend + ?Sized>(
    backend: &B,
    samples: &[McqSample],
    prompt_id: CorrectionPromptId,
    k_turns: usize,
    settings: &GenerationSettings,
    parallelism: usize,
) -> BatchOutcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<_> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| run_intrinsic_self_correction(backend, s, prompt_id, k_turns, settings))
            .collect()
    });
    let mut outcome = BatchOutcome::default();
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok(r) => outcome.records.push(r),
            Err(e) => outcome.failures.push(SampleFailure {
                sample_id: sample.id.clone(),
                backend: e.is_backend_failure(),
                message: e.to_string(),
            }),
        }
    }
    outcome
        .records
        .sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    outcome
        .failures
        .sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    outcome
}

pub const TRACE_FORMAT: &str = "scl-trace/1";

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub rules_version: String,
    pub prompt_id: CorrectionPromptId,
    pub k_turns: usize,
    pub settings: GenerationSettings,
}

impl TraceHeader {
    pub fn new(
        prompt_id: CorrectionPromptId,
        k_turns: usize,
        settings: GenerationSettings,
    ) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            rules_version: RULES_VERSION.into(),
            prompt_id,
            k_turns,
            settings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Absent only for a completely empty file.
    pub header: Option<TraceHeader>,
    pub records: Vec<SelfCorrectionRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: {detail}")]
    Malformed { line: usize, detail: String },
}

pub fn trace_to_string(trace: &Trace) -> String {
    let mut out = String::new();
    if let Some(h) = &trace.header {
        out.push_str(&serde_json::to_string(h).expect("header serializes"));
        out.push('\n');
    }
    out.push_str(&jsonl::to_lines(&trace.records).expect("records serialize"));
    out
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    for (i, (line, raw)) in jsonl::numbered_lines(text).enumerate() {
        let malformed = |e: serde_json::Error| TraceError::Malformed {
            line,
            detail: e.to_string(),
        };
        if i == 0 {
            let header: TraceHeader = jsonl::parse_line(raw).map_err(malformed)?;
            if header.format != TRACE_FORMAT {
                return Err(TraceError::Malformed {
                    line,
                    detail: format!("unsupported trace format {:?}", header.format),
                });
            }
            trace.header = Some(header);
            continue;
        }
        let record: SelfCorrectionRecord = jsonl::parse_line(raw).map_err(malformed)?;
        let k = record.responses.len();
        if k < 2 || record.parsed_labels.len() != k || record.correctness.len() != k {
            return Err(TraceError::Malformed {
                line,
                detail:
                    "responses, parsed_labels and correctness must share a length of at least 2"
                        .into(),
            });
        }
        trace.records.push(record);
    }
    Ok(trace)
}

pub fn write_trace(trace: &Trace, path: &Path) -> std::io::Result<()> {
    jsonl::write_atomic(path, trace_to_string(trace).as_bytes())
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Choice, ImageKind, ImageRef};
    use crate::gateway::ScriptedBackend;
    use std::sync::Mutex;

    fn sample(id: &str, key: &str) -> McqSample {
        McqSample {
            id: id.into(),
            source: "unit".into(),
            question: "How many chairs are there?".into(),
            image: ImageRef {
                kind: ImageKind::Url,
                value: "http://img/1.png".into(),
            },
            choices: vec![
                Choice::new("A", "One"),
                Choice::new("B", "Three"),
                Choice::new("C", "Two"),
                Choice::new("D", "Four"),
            ],
            answer_key: key.into(),
        }
    }

    fn scripted(id: &str, replies: &[&str]) -> ScriptedBackend {
        let mut b = ScriptedBackend::new();
        for (t, r) in replies.iter().enumerate() {
            b.insert(id, t, *r);
        }
        b
    }

    #[test]
    fn standard_prompt_layout() {
        let turn = render_standard_prompt(&sample("q", "B"));
        assert_eq!(turn.role, Role::User);
        assert_eq!(turn.image_count(), 1);
        assert_eq!(
            turn.text(),
            "How many chairs are there?\nA. One\nB. Three\nC. Two\nD. Four\nAnswer with the option's letter/label."
        );
        assert_eq!(turn, render_standard_prompt(&sample("q", "B")));
    }

    #[test]
    fn numeric_labels_render() {
        let mut s = sample("q", "0");
        s.question = "Select the amphibian below.".into();
        s.choices = vec![
            Choice::new("0", "brown tree frog"),
            Choice::new("1", "woodpecker"),
        ];
        let text = standard_prompt_text(&s);
        assert!(text.contains("\n0. brown tree frog\n1. woodpecker\n"));
    }

    #[test]
    fn prompt_texts() {
        assert!(correction_prompt_text(CorrectionPromptId::VP1)
            .unwrap()
            .starts_with("Review your previous answer and ensure that all relevant aspects of the image have been considered."));
        assert!(correction_prompt_text(CorrectionPromptId::CP)
            .unwrap()
            .starts_with("Review your previous answer and find problems with your answer."));
        assert_eq!(
            correction_prompt_text(CorrectionPromptId::SP),
            Err(StandardPromptAsRefinement)
        );
    }

    #[test]
    fn prompt_ids_parse() {
        assert_eq!(
            "VP-1".parse::<CorrectionPromptId>().unwrap(),
            CorrectionPromptId::VP1
        );
        assert_eq!(
            "cp".parse::<CorrectionPromptId>().unwrap(),
            CorrectionPromptId::CP
        );
        assert!("VP4".parse::<CorrectionPromptId>().is_err());
    }

    #[test]
    fn incorrect_to_correct_is_type2() {
        let b = scripted(
            "q1",
            &[
                "I count two. The answer is C.",
                "Looking again, the answer is B.",
            ],
        );
        let r = run_intrinsic_self_correction(
            &b,
            &sample("q1", "B"),
            CorrectionPromptId::VP1,
            1,
            &GenerationSettings::default(),
        )
        .unwrap();
        assert_eq!(r.correctness, vec![false, true]);
        assert_eq!(r.transition, TransitionType::Type2);
    }

    #[test]
    fn stable_correct_is_type1() {
        let b = scripted("q1", &["C", "C"]);
        let r = run_intrinsic_self_correction(
            &b,
            &sample("q1", "C"),
            CorrectionPromptId::CP,
            1,
            &GenerationSettings::default(),
        )
        .unwrap();
        assert_eq!(r.correctness, vec![true, true]);
        assert_eq!(r.transition, TransitionType::Type1);
    }

    #[test]
    fn three_turns_give_four_responses() {
        let b = scripted("q1", &["A", "B", "C", "D"]);
        let r = run_intrinsic_self_correction(
            &b,
            &sample("q1", "D"),
            CorrectionPromptId::VP2,
            3,
            &GenerationSettings::default(),
        )
        .unwrap();
        assert_eq!(r.responses.len(), 4);
        assert_eq!(r.correctness, vec![false, false, false, true]);
        assert_eq!(r.k_turns(), 3);
    }

    #[test]
    fn rejects_sp_and_zero_turns() {
        let b = scripted("q1", &["A", "B"]);
        let s = sample("q1", "A");
        let g = GenerationSettings::default();
        assert!(matches!(
            run_intrinsic_self_correction(&b, &s, CorrectionPromptId::SP, 1, &g),
            Err(SelfCorrectError::Prompt(_))
        ));
        assert!(matches!(
            run_intrinsic_self_correction(&b, &s, CorrectionPromptId::CP, 0, &g),
            Err(SelfCorrectError::NoRefinementTurns)
        ));
    }

    #[test]
    fn gateway_error_names_sample_and_turn() {
        let b = scripted("q1", &["A"]);
        let err = run_intrinsic_self_correction(
            &b,
            &sample("q1", "A"),
            CorrectionPromptId::CP,
            1,
            &GenerationSettings::default(),
        )
        .unwrap_err();
        assert!(
            matches!(&err, SelfCorrectError::Gateway { sample_id, turn: 1, .. } if sample_id == "q1")
        );
    }

    /// Records every conversation it is asked to complete.
    struct Recorder {
        inner: ScriptedBackend,
        seen: Mutex<Vec<Conversation>>,
    }

    impl ChatBackend for Recorder {
        fn complete(
            &self,
            c: &Conversation,
            s: &GenerationSettings,
        ) -> Result<String, GatewayError> {
            self.seen.lock().unwrap().push(c.clone());
            self.inner.complete(c, s)
        }
    }

    #[test]
    fn history_only_grows() {
        let rec = Recorder {
            inner: scripted("q1", &["A", "B", "C", "D"]),
            seen: Mutex::new(Vec::new()),
        };
        run_intrinsic_self_correction(
            &rec,
            &sample("q1", "D"),
            CorrectionPromptId::VP3,
            3,
            &GenerationSettings::default(),
        )
        .unwrap();
        let seen = rec.seen.into_inner().unwrap();
        assert_eq!(seen.len(), 4);
        for w in seen.windows(2) {
            let (a, b) = (w[0].turns(), w[1].turns());
            assert_eq!(b.len(), a.len() + 2);
            assert_eq!(&b[..a.len()], a);
        }
        // Image sent once, refinement turns are text only.
        let last = seen.last().unwrap();
        assert_eq!(last.image_count(), 1);
        assert_eq!(last.turns()[0].image_count(), 1);
        assert_eq!(last.turns()[2].text(), SCENE_ANALYSIS_PROMPT);
    }

    fn batch_fixture() -> (Vec<McqSample>, ScriptedBackend) {
        let mut samples = Vec::new();
        let mut b = ScriptedBackend::new();
        for i in (0..10).rev() {
            let id = format!("s{i:02}");
            samples.push(sample(&id, "B"));
            b.insert(
                &id,
                0,
                if i % 2 == 0 {
                    "The answer is B."
                } else {
                    "The answer is C."
                },
            );
            b.insert(&id, 1, "**B**");
        }
        (samples, b)
    }

    #[test]
    fn batch_sorted_and_parallelism_independent() {
        let (samples, b) = batch_fixture();
        let g = GenerationSettings::default();
        let one = run_batch(&b, &samples, CorrectionPromptId::VP1, 1, &g, 1);
        let four = run_batch(&b, &samples, CorrectionPromptId::VP1, 1, &g, 4);
        assert_eq!(one.records.len(), 10);
        assert!(one
            .records
            .windows(2)
            .all(|w| w[0].sample_id < w[1].sample_id));
        assert_eq!(one, four);
    }

    #[test]
    fn batch_collects_failures() {
        let (samples, mut b) = batch_fixture();
        b = ScriptedBackend::from_entries(
            b.entries()
                .filter(|e| !(e.sample_id == "s03" && e.turn == 1)),
        );
        let out = run_batch(
            &b,
            &samples,
            CorrectionPromptId::VP1,
            1,
            &GenerationSettings::default(),
            4,
        );
        assert_eq!(out.records.len(), 9);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].sample_id, "s03");
        assert!(!out.failures[0].backend);
    }

    #[test]
    fn trace_round_trip_and_errors() {
        let (samples, b) = batch_fixture();
        let g = GenerationSettings::default();
        let out = run_batch(&b, &samples, CorrectionPromptId::VP1, 1, &g, 2);
        let trace = Trace {
            header: Some(TraceHeader::new(CorrectionPromptId::VP1, 1, g)),
            records: out.records,
        };
        let text = trace_to_string(&trace);
        assert_eq!(parse_trace(&text).unwrap(), trace);
        assert_eq!(parse_trace("").unwrap(), Trace::default());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{not json";
        assert!(matches!(
            parse_trace(&lines.join("\n")),
            Err(TraceError::Malformed { line: 4, .. })
        ));
    }
}
