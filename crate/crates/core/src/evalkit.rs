//! Evaluation metrics and reports: accuracy, average rank, transition
//! distributions, per-turn accuracy, and subset sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::McqSample;
use crate::dpo::{self, DpoConfig, DpoError, ToyPolicy};
use crate::grading::TypeCounts;
use crate::prefset::{self, CorpusIndex, PrefsetError, SelfCorSet};
use crate::selfcorrect::SelfCorrectionRecord;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    NoRecords,
    #[error("turn {turn} requested but record {sample_id:?} has only {available} responses")]
    TurnOutOfRange {
        turn: usize,
        sample_id: String,
        available: usize,
    },
    #[error("records have different turn counts ({first} vs {other} for {sample_id:?})")]
    RaggedTurns {
        first: usize,
        other: usize,
        sample_id: String,
    },
    #[error("score table: {0}")]
    Table(String),
    #[error("sweep fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("no evaluation samples")]
    NoEvalSamples,
    #[error(transparent)]
    Dpo(#[from] DpoError),
    #[error(transparent)]
    Prefset(#[from] PrefsetError),
    #[error("{path}: {detail}")]
    File { path: String, detail: String },
}

/// Percentage of records whose response at `turn` grades correct.
/// Unparseable responses count as incorrect.
pub fn accuracy(records: &[SelfCorrectionRecord], turn: usize) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut correct = 0usize;
    for r in records {
        let ok = r
            .correctness
            .get(turn)
            .ok_or_else(|| EvalError::TurnOutOfRange {
                turn,
                sample_id: r.sample_id.clone(),
                available: r.correctness.len(),
            })?;
        correct += usize::from(*ok);
    }
    Ok(100.0 * correct as f64 / records.len() as f64)
}

pub fn type_distribution(records: &[SelfCorrectionRecord]) -> TypeCounts {
    records.iter().map(|r| r.transition).collect()
}

/// Accuracy at every turn `0..=K`; all records must share `K`.
pub fn multi_turn_report(records: &[SelfCorrectionRecord]) -> Result<Vec<f64>, EvalError> {
    let first = records.first().ok_or(EvalError::NoRecords)?;
    let n = first.responses.len();
    if let Some(r) = records.iter().find(|r| r.responses.len() != n) {
        return Err(EvalError::RaggedTurns {
            first: n,
            other: r.responses.len(),
            sample_id: r.sample_id.clone(),
        });
    }
    (0..n).map(|t| accuracy(records, t)).collect()
}

/// Per-benchmark accuracy at every turn, grouping records by their sample's source.
pub fn accuracy_by_source(
    records: &[SelfCorrectionRecord],
    index: &CorpusIndex,
) -> Result<BTreeMap<String, Vec<f64>>, EvalError> {
    let mut groups: BTreeMap<String, Vec<SelfCorrectionRecord>> = BTreeMap::new();
    for r in records {
        let source =
            index
                .get(&r.sample_id)
                .map(|s| s.source.clone())
                .ok_or(EvalError::Prefset(PrefsetError::UnknownSample {
                    sample_id: r.sample_id.clone(),
                }))?;
        groups.entry(source).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(source, rs)| multi_turn_report(&rs).map(|acc| (source, acc)))
        .collect()
}

/// Accuracy percentages, methods × benchmarks, no missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub benchmarks: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(
        methods: Vec<String>,
        benchmarks: Vec<String>,
        scores: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        let t = Self {
            methods,
            benchmarks,
            scores,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.methods.is_empty() || self.benchmarks.is_empty() {
            return Err(EvalError::Table(
                "needs at least one method and one benchmark".into(),
            ));
        }
        if self.scores.len() != self.methods.len() {
            return Err(EvalError::Table(format!(
                "{} methods but {} score rows",
                self.methods.len(),
                self.scores.len()
            )));
        }
        for (m, row) in self.methods.iter().zip(&self.scores) {
            if row.len() != self.benchmarks.len() {
                return Err(EvalError::Table(format!(
                    "method {m:?} has {} scores for {} benchmarks",
                    row.len(),
                    self.benchmarks.len()
                )));
            }
            if let Some(s) = row.iter().find(|s| !(0.0..=100.0).contains(*s)) {
                return Err(EvalError::Table(format!(
                    "method {m:?} has score {s} outside [0, 100]"
                )));
            }
        }
        Ok(())
    }

    /// CSV with a `method` column followed by one column per benchmark.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| EvalError::Table(e.to_string()))?
            .clone();
        let benchmarks: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let mut methods = Vec::new();
        let mut scores = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| EvalError::Table(format!("row {}: {e}", i + 1)))?;
            let mut cells = row.iter();
            methods.push(cells.next().unwrap_or_default().to_string());
            let parsed: Result<Vec<f64>, _> = cells
                .map(|c| {
                    c.parse::<f64>().map_err(|_| {
                        EvalError::Table(format!(
                            "row {}: missing or non-numeric score {c:?}",
                            i + 1
                        ))
                    })
                })
                .collect();
            scores.push(parsed?);
        }
        Self::new(methods, benchmarks, scores)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.benchmarks.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (m, row) in self.methods.iter().zip(&self.scores) {
            let mut rec = vec![m.clone()];
            rec.extend(row.iter().map(|s| format!("{s:.2}")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Fractional ranks of one column: highest score gets 1, ties share the
/// mean of the positions they occupy.
pub fn rank_column(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) → ranks i+1..=j+1
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: String,
    pub mean_rank: f64,
}

impl MethodRank {
    pub fn display(&self) -> String {
        format!("{:.2}", round_half_up(self.mean_rank, 2))
    }
}

/// Round half away from zero at `decimals` places (inputs here are non-negative).
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    // Nudge by a few ulps so 1.005-style decimals that are stored just below
    // the half-way point still round up.
    ((x * scale) * (1.0 + 4.0 * f64::EPSILON) + 0.5).floor() / scale
}

/// Mean per-benchmark rank of every method (lower is better), in table order.
pub fn average_rank(table: &ScoreTable) -> Result<Vec<MethodRank>, EvalError> {
    table.validate()?;
    let n_bench = table.benchmarks.len();
    let mut sums = vec![0.0; table.methods.len()];
    for b in 0..n_bench {
        let column: Vec<f64> = table.scores.iter().map(|row| row[b]).collect();
        for (s, r) in sums.iter_mut().zip(rank_column(&column)) {
            *s += r;
        }
    }
    Ok(table
        .methods
        .iter()
        .zip(sums)
        .map(|(m, s)| MethodRank {
            method: m.clone(),
            mean_rank: s / n_bench as f64,
        })
        .collect())
}

/// Responses the toy policy chooses between for an evaluation question:
/// one canonical answer per choice.
pub fn candidate_responses(sample: &McqSample) -> Vec<String> {
    sample
        .choices
        .iter()
        .map(|c| format!("The answer is {}. {}", c.label, c.text))
        .collect()
}

/// Label of the highest-probability candidate (first on ties).
pub fn policy_choice<'a>(policy: &ToyPolicy, sample: &'a McqSample) -> &'a str {
    let context = dpo::render_context(&sample.question, &sample.choices);
    let candidates = candidate_responses(sample);
    let refs: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let lp = policy.log_probs(&context, &refs);
    let mut best = 0;
    for (i, v) in lp.iter().enumerate() {
        if *v > lp[best] {
            best = i;
        }
    }
    &sample.choices[best].label
}

/// Percentage of samples where the policy's argmax candidate is the keyed answer.
pub fn policy_accuracy(policy: &ToyPolicy, samples: &[McqSample]) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoEvalSamples);
    }
    let correct = samples
        .iter()
        .filter(|s| policy_choice(policy, s) == s.answer_key)
        .count();
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub pairs: usize,
    pub accuracy: f64,
    /// Final mean training loss; absent when no training happened.
    pub final_loss: Option<f64>,
}

/// Train on nested subsets of the set and score each trained policy on the
/// evaluation samples. Empty subsets evaluate the initial policy.
pub fn subset_sweep(
    set: &SelfCorSet,
    eval_set: &[McqSample],
    grid: &[f64],
    config: &DpoConfig,
    subset_seed: u64,
) -> Result<Vec<SweepPoint>, EvalError> {
    config.validate()?;
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::Fraction(*p));
    }
    if eval_set.is_empty() {
        return Err(EvalError::NoEvalSamples);
    }
    let mut points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&p| -> Result<SweepPoint, EvalError> {
            let sub = prefset::subset(set, p, subset_seed)?;
            let (policy, final_loss) = if sub.is_empty() {
                (config.initial_policy(), None)
            } else {
                let (policy, report) = dpo::train(&sub, config)?;
                (policy, Some(report.final_loss()))
            };
            Ok(SweepPoint {
                fraction: p,
                pairs: sub.len(),
                accuracy: policy_accuracy(&policy, eval_set)?,
                final_loss,
            })
        })
        .collect::<Result<_, _>>()?;
    points.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
    Ok(points)
}

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction", "pairs", "accuracy", "final_loss"])
        .expect("in-memory write");
    for p in points {
        w.write_record([
            format!("{:.2}", p.fraction),
            p.pairs.to_string(),
            format!("{:.2}", p.accuracy),
            p.final_loss.map(|l| format!("{l:.6}")).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Everything `evaluate`/`sweep` can report. Sections that were not requested stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    /// Source → accuracy per turn.
    pub accuracy_by_benchmark: BTreeMap<String, Vec<f64>>,
    pub type_distribution: Option<TypeCounts>,
    pub per_turn_accuracy: Vec<f64>,
    pub score_table: Option<ScoreTable>,
    pub ranks: Vec<MethodRank>,
    pub policy_accuracy: Option<f64>,
    pub sweep: Vec<SweepPoint>,
}

impl EvalReport {
    pub fn from_records(
        records: &[SelfCorrectionRecord],
        index: &CorpusIndex,
    ) -> Result<Self, EvalError> {
        let mut report = EvalReport {
            records: records.len(),
            type_distribution: Some(type_distribution(records)),
            ..Self::default()
        };
        if !records.is_empty() {
            report.per_turn_accuracy = multi_turn_report(records)?;
            report.accuracy_by_benchmark = accuracy_by_source(records, index)?;
        }
        Ok(report)
    }

    pub fn with_ranks(mut self, table: ScoreTable) -> Result<Self, EvalError> {
        self.ranks = average_rank(&table)?;
        self.score_table = Some(table);
        Ok(self)
    }

    /// Plain-text rendering laid out like the usual results tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if let Some(t) = &self.score_table {
            let _ = writeln!(out, "Scores (%) and average rank (lower is better)");
            let _ = write!(out, "{:<16}", "Method");
            for b in &t.benchmarks {
                let _ = write!(out, " {:>12}", b);
            }
            let _ = writeln!(out, " {:>8}", "Rank");
            for ((m, row), r) in t.methods.iter().zip(&t.scores).zip(&self.ranks) {
                let _ = write!(out, "{:<16}", m);
                for s in row {
                    let _ = write!(out, " {:>12.2}", s);
                }
                let _ = writeln!(out, " {:>8}", r.display());
            }
            out.push('\n');
        }
        if let Some(c) = &self.type_distribution {
            let _ = writeln!(out, "Self-correction types over {} records", self.records);
            for t in crate::grading::TransitionType::ALL {
                let n = c.get(t);
                let pct = if self.records > 0 {
                    100.0 * n as f64 / self.records as f64
                } else {
                    0.0
                };
                let _ = writeln!(out, "  {:<13} {:>6} {:>7.2}%", t.name(), n, pct);
            }
            out.push('\n');
        }
        if !self.per_turn_accuracy.is_empty() {
            let _ = write!(out, "{:<16}", "Accuracy (%)");
            for t in 0..self.per_turn_accuracy.len() {
                let _ = write!(out, " {:>8}", format!("Turn {t}"));
            }
            out.push('\n');
            for (source, acc) in &self.accuracy_by_benchmark {
                let _ = write!(out, "{:<16}", source);
                for a in acc {
                    let _ = write!(out, " {:>8.2}", a);
                }
                out.push('\n');
            }
            let _ = write!(out, "{:<16}", "all");
            for a in &self.per_turn_accuracy {
                let _ = write!(out, " {:>8.2}", a);
            }
            out.push_str("\n\n");
        }
        if let Some(a) = self.policy_accuracy {
            let _ = writeln!(out, "Toy policy accuracy on evaluation split: {a:.2}%\n");
        }
        if !self.sweep.is_empty() {
            let _ = writeln!(out, "Subset sweep");
            let _ = writeln!(out, "  {:>8} {:>8} {:>9}", "fraction", "pairs", "accuracy");
            for p in &self.sweep {
                let _ = writeln!(
                    out,
                    "  {:>7.0}% {:>8} {:>8.2}%",
                    p.fraction * 100.0,
                    p.pairs,
                    p.accuracy
                );
            }
        }
        out
    }

    pub fn write(&self, json_path: &Path, text_path: &Path) -> Result<(), EvalError> {
        let file_err = |p: &Path, e: std::io::Error| EvalError::File {
            path: p.display().to_string(),
            detail: e.to_string(),
        };
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        crate::jsonl::write_atomic(json_path, json.as_bytes())
            .map_err(|e| file_err(json_path, e))?;
        crate::jsonl::write_atomic(text_path, self.render_text().as_bytes())
            .map_err(|e| file_err(text_path, e))
    }
}
