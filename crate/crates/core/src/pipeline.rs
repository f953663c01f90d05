//! File-to-file orchestration behind the `scl` command line.
//!
//! Every command reads one TOML config, consumes files, writes its outputs
//! under the output directory, and leaves a resolved copy of the config
//! beside them. Stages compose only through files:
//! corpus → trace → preference set → policy → report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::corpus::{self, CorpusError, McqSample};
use crate::dpo::{self, DpoConfig, DpoError};
use crate::evalkit::{self, EvalError, EvalReport, ScoreTable};
use crate::gateway::FixtureError;
use crate::gateway::{
    ChatBackend, GatewayError, GenerationSettings, HttpBackend, HttpConfig, ScriptedBackend,
};
use crate::jsonl;
use crate::prefset::{self, BuildInfo, CorpusIndex, PrefsetError};
use crate::selfcorrect::{
    self, CorrectionPromptId, SampleFailure, Trace, TraceError, TraceHeader, MAX_TURNS,
};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const FAILURES_FILE: &str = "selfcorrect_failures.json";
pub const SET_FILE: &str = "selfcorset.jsonl";
pub const POLICY_FILE: &str = "policy.jsonl";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const SCORES_FILE: &str = "scores.csv";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const SWEEP_JSON_FILE: &str = "sweep_report.json";
pub const SWEEP_TEXT_FILE: &str = "sweep_report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    /// Samples held out for evaluation; the rest feed dataset construction.
    #[serde(default)]
    pub eval_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Replay a `{sample_id, turn, text}` JSONL fixture.
    Scripted {
        fixture: PathBuf,
    },
    Http(HttpConfig),
}

fn prompt_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<CorrectionPromptId, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_prompt() -> CorrectionPromptId {
    CorrectionPromptId::CP
}

fn default_k_turns() -> usize {
    1
}

fn default_parallelism() -> usize {
    4
}

fn default_p_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_prompt", deserialize_with = "prompt_from_str")]
    pub prompt_id: CorrectionPromptId,
    #[serde(default = "default_k_turns")]
    pub k_turns: usize,
    /// Permit more than three refinement turns.
    #[serde(default)]
    pub allow_extra_turns: bool,
    pub split_seed: u64,
    pub subset_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    #[serde(default)]
    pub corpus: Vec<CorpusSource>,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub dpo: DpoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Usage,
    Data,
    Backend,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Backend => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config {path}: {detail}")]
    Config { path: String, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sample id {0:?} appears in more than one corpus")]
    DuplicateAcrossCorpora(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Prefset(#[from] PrefsetError),
    #[error(transparent)]
    Dpo(#[from] DpoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{failed} of {total} samples failed (first: {first}); details in {report}")]
    Batch {
        failed: usize,
        total: usize,
        backend: bool,
        first: String,
        report: String,
    },
    #[error("writing {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Config { .. } | PipelineError::Usage(_) => ErrorKind::Usage,
            PipelineError::Gateway(e) if e.is_backend_failure() => ErrorKind::Backend,
            PipelineError::Batch { backend: true, .. } => ErrorKind::Backend,
            _ => ErrorKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output {
        path: path.display().to_string(),
        source,
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config {
            path: origin.to_string(),
            detail: e.to_string(),
        })
    }

    /// Parse, resolve relative paths against the config's directory, and validate.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.out_dir);
        for c in &mut self.corpus {
            join(&mut c.path);
        }
        if let Some(BackendConfig::Scripted { fixture }) = &mut self.backend {
            join(fixture);
        }
    }

    /// Command-line overrides: output directory and a seed applied to every seed field.
    pub fn apply_overrides(&mut self, out_dir: Option<PathBuf>, seed: Option<u64>) {
        if let Some(out) = out_dir {
            self.out_dir = out;
        }
        if let Some(s) = seed {
            self.split_seed = s;
            self.subset_seed = s;
            self.dpo.seed = s;
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let usage = |m: String| Err(PipelineError::Usage(m));
        if self.prompt_id == CorrectionPromptId::SP {
            return usage("prompt_id must be a refinement prompt (CP, VP1, VP2 or VP3)".into());
        }
        if self.k_turns == 0 {
            return usage("k_turns must be at least 1".into());
        }
        if self.k_turns > MAX_TURNS && !self.allow_extra_turns {
            return usage(format!(
                "k_turns {} exceeds {MAX_TURNS}; set allow_extra_turns = true to permit it",
                self.k_turns
            ));
        }
        if self.parallelism == 0 {
            return usage("parallelism must be at least 1".into());
        }
        if let Some(p) = self.p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return usage(format!("p_grid value {p} outside [0, 1]"));
        }
        self.dpo
            .validate()
            .map_err(|e| PipelineError::Usage(e.to_string()))?;
        for c in &self.corpus {
            if !c.path.exists() {
                return Err(PipelineError::MissingPath {
                    what: "corpus",
                    path: c.path.display().to_string(),
                });
            }
        }
        if let Some(BackendConfig::Scripted { fixture }) = &self.backend {
            if !fixture.exists() {
                return Err(PipelineError::MissingPath {
                    what: "fixture",
                    path: fixture.display().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn out_path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn ensure_out_dir(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.out_dir).map_err(output_err(&self.out_dir))
    }

    /// Write `<command>.resolved.toml` beside the outputs.
    fn echo(&self, command: &str) -> Result<PathBuf, PipelineError> {
        self.ensure_out_dir()?;
        let path = self.out_path(&format!("{command}.resolved.toml"));
        let mut text = format!("# resolved configuration for `{command}`\n");
        text.push_str(&toml::to_string(self).expect("config serializes"));
        jsonl::write_atomic(&path, text.as_bytes()).map_err(output_err(&path))?;
        Ok(path)
    }

    fn require_corpus(&self) -> Result<(), PipelineError> {
        if self.corpus.is_empty() {
            return Err(PipelineError::Usage(
                "config lists no [[corpus]] entries".into(),
            ));
        }
        Ok(())
    }
}

/// Every configured corpus, split per its eval count.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpora {
    pub eval_set: Vec<McqSample>,
    pub build_set: Vec<McqSample>,
    pub index: CorpusIndex,
}

pub fn load_corpora(cfg: &PipelineConfig) -> Result<LoadedCorpora, PipelineError> {
    let mut out = LoadedCorpora::default();
    for source in &cfg.corpus {
        let samples = corpus::load_corpus(&source.path)?;
        let split = corpus::split_eval_build(&samples, source.eval_count, cfg.split_seed);
        for s in samples {
            if out.index.contains_key(&s.id) {
                return Err(PipelineError::DuplicateAcrossCorpora(s.id));
            }
            out.index.insert(s.id.clone(), s);
        }
        out.eval_set.extend(split.eval_set);
        out.build_set.extend(split.build_set);
    }
    out.eval_set.sort_by(|a, b| a.id.cmp(&b.id));
    out.build_set.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn open_backend(cfg: &PipelineConfig) -> Result<Box<dyn ChatBackend>, PipelineError> {
    match &cfg.backend {
        None => Err(PipelineError::Usage(
            "config has no [backend] section".into(),
        )),
        Some(BackendConfig::Scripted { fixture }) => Ok(Box::new(ScriptedBackend::load(fixture)?)),
        Some(BackendConfig::Http(http)) => Ok(Box::new(HttpBackend::new(http.clone())?)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfCorrectSummary {
    pub trace: PathBuf,
    pub records: usize,
    pub failures: Vec<SampleFailure>,
}

/// Run the self-correction protocol over the build split with the configured backend.
pub fn cmd_selfcorrect(cfg: &PipelineConfig) -> Result<SelfCorrectSummary, PipelineError> {
    cfg.require_corpus()?;
    let backend = open_backend(cfg)?;
    cmd_selfcorrect_with(cfg, backend.as_ref())
}

/// [`cmd_selfcorrect`] with a caller-supplied backend.
pub fn cmd_selfcorrect_with<B: ChatBackend + ?Sized>(
    cfg: &PipelineConfig,
    backend: &B,
) -> Result<SelfCorrectSummary, PipelineError> {
    cfg.require_corpus()?;
    let corpora = load_corpora(cfg)?;
    cfg.echo("selfcorrect")?;
    let outcome = selfcorrect::run_batch(
        backend,
        &corpora.build_set,
        cfg.prompt_id,
        cfg.k_turns,
        &cfg.generation,
        cfg.parallelism,
    );
    let trace = Trace {
        header: Some(TraceHeader::new(
            cfg.prompt_id,
            cfg.k_turns,
            cfg.generation.clone(),
        )),
        records: outcome.records,
    };
    let trace_path = cfg.out_path(TRACE_FILE);
    selfcorrect::write_trace(&trace, &trace_path).map_err(output_err(&trace_path))?;
    let failures_path = cfg.out_path(FAILURES_FILE);
    if outcome.failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).map_err(output_err(&failures_path))?;
        }
    } else {
        let mut text = serde_json::to_string_pretty(&outcome.failures).expect("failures serialize");
        text.push('\n');
        jsonl::write_atomic(&failures_path, text.as_bytes()).map_err(output_err(&failures_path))?;
        return Err(PipelineError::Batch {
            failed: outcome.failures.len(),
            total: corpora.build_set.len(),
            backend: outcome.failures.iter().any(|f| f.backend),
            first: outcome.failures[0].message.clone(),
            report: failures_path.display().to_string(),
        });
    }
    Ok(SelfCorrectSummary {
        trace: trace_path,
        records: trace.records.len(),
        failures: Vec::new(),
    })
}

/// Turn a trace into a preference set. Defaults to the trace in the output directory.
pub fn cmd_build(cfg: &PipelineConfig, trace: Option<&Path>) -> Result<PathBuf, PipelineError> {
    let trace_path = trace
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_path(TRACE_FILE));
    let trace = selfcorrect::read_trace(&trace_path)?;
    let index = if trace.records.is_empty() {
        CorpusIndex::new()
    } else {
        cfg.require_corpus()?;
        load_corpora(cfg)?.index
    };
    let (prompt_id, model_id) = match &trace.header {
        Some(h) => (h.prompt_id, h.settings.model_id.clone()),
        None => (cfg.prompt_id, cfg.generation.model_id.clone()),
    };
    let set = prefset::build_preference_pairs(
        &trace.records,
        &index,
        &BuildInfo {
            model_id,
            prompt_id,
            seed: cfg.split_seed,
        },
    )?;
    cfg.echo("build")?;
    let out = cfg.out_path(SET_FILE);
    prefset::write_selfcorset(&set, &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutputs {
    pub policy: PathBuf,
    pub report: PathBuf,
    pub report_data: dpo::TrainReport,
}

/// Train the toy policy on a preference set. Defaults to the set in the output directory.
pub fn cmd_train(cfg: &PipelineConfig, set: Option<&Path>) -> Result<TrainOutputs, PipelineError> {
    let set_path = set
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_path(SET_FILE));
    let set = prefset::read_selfcorset(&set_path)?;
    let (policy, report) = dpo::train(&set, &cfg.dpo)?;
    cfg.echo("train")?;
    let policy_path = cfg.out_path(POLICY_FILE);
    dpo::write_policy(&policy, &cfg.dpo, &policy_path).map_err(output_err(&policy_path))?;
    let report_path = cfg.out_path(TRAIN_REPORT_FILE);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    jsonl::write_atomic(&report_path, text.as_bytes()).map_err(output_err(&report_path))?;
    Ok(TrainOutputs {
        policy: policy_path,
        report: report_path,
        report_data: report,
    })
}

/// Inputs for `evaluate`; at least one must be present.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvaluateInputs {
    pub trace: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    inputs: &EvaluateInputs,
) -> Result<EvalReport, PipelineError> {
    if inputs.trace.is_none() && inputs.scores.is_none() && inputs.policy.is_none() {
        return Err(PipelineError::Usage(
            "evaluate needs at least one of --trace, --scores, --policy".into(),
        ));
    }
    let needs_corpus = inputs.policy.is_some() || inputs.trace.is_some();
    let corpora = if needs_corpus {
        cfg.require_corpus()?;
        load_corpora(cfg)?
    } else {
        LoadedCorpora::default()
    };
    let mut report = EvalReport::default();
    if let Some(path) = &inputs.trace {
        let trace = selfcorrect::read_trace(path)?;
        report = EvalReport::from_records(&trace.records, &corpora.index)?;
    }
    let mut table = None;
    if let Some(path) = &inputs.scores {
        let text = std::fs::read_to_string(path).map_err(|_| PipelineError::MissingPath {
            what: "score table",
            path: path.display().to_string(),
        })?;
        let t = ScoreTable::from_csv(&text)?;
        report = report.with_ranks(t.clone())?;
        table = Some(t);
    }
    if let Some(path) = &inputs.policy {
        let (policy, _) = dpo::read_policy(path)?;
        report.policy_accuracy = Some(evalkit::policy_accuracy(&policy, &corpora.eval_set)?);
    }
    cfg.echo("evaluate")?;
    report.write(
        &cfg.out_path(REPORT_JSON_FILE),
        &cfg.out_path(REPORT_TEXT_FILE),
    )?;
    if let Some(t) = table {
        let path = cfg.out_path(SCORES_FILE);
        jsonl::write_atomic(&path, t.to_csv().as_bytes()).map_err(output_err(&path))?;
    }
    Ok(report)
}

/// Train on nested subsets over the configured grid and score each on the eval split.
pub fn cmd_sweep(cfg: &PipelineConfig, set: Option<&Path>) -> Result<EvalReport, PipelineError> {
    cfg.require_corpus()?;
    let set_path = set
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_path(SET_FILE));
    let set = prefset::read_selfcorset(&set_path)?;
    let corpora = load_corpora(cfg)?;
    let points = evalkit::subset_sweep(
        &set,
        &corpora.eval_set,
        &cfg.p_grid,
        &cfg.dpo,
        cfg.subset_seed,
    )?;
    cfg.echo("sweep")?;
    let csv_path = cfg.out_path(SWEEP_CSV_FILE);
    jsonl::write_atomic(&csv_path, evalkit::sweep_to_csv(&points).as_bytes())
        .map_err(output_err(&csv_path))?;
    let report = EvalReport {
        sweep: points,
        ..EvalReport::default()
    };
    report.write(
        &cfg.out_path(SWEEP_JSON_FILE),
        &cfg.out_path(SWEEP_TEXT_FILE),
    )?;
    Ok(report)
}

/// Per-source accuracy of a trace, convenient for quick summaries.
pub fn trace_accuracy_by_source(
    trace: &Trace,
    index: &CorpusIndex,
) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
    Ok(evalkit::accuracy_by_source(&trace.records, index)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "split_seed = 1\nsubset_seed = 2\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml(MINIMAL, "inline").unwrap();
        assert_eq!(cfg.k_turns, 1);
        assert_eq!(cfg.prompt_id, CorrectionPromptId::CP);
        assert_eq!(cfg.p_grid.len(), 6);
        assert_eq!(cfg.dpo, DpoConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn seeds_are_required() {
        let err = PipelineConfig::from_toml("split_seed = 1\n", "inline").unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Usage);
        assert!(err.to_string().contains("subset_seed"), "{err}");
    }

    #[test]
    fn prompt_accepts_hyphenated_form() {
        let cfg = PipelineConfig::from_toml(&format!("{MINIMAL}prompt_id = \"VP-2\"\n"), "inline")
            .unwrap();
        assert_eq!(cfg.prompt_id, CorrectionPromptId::VP2);
    }

    #[test]
    fn turn_cap_needs_override() {
        let mut cfg =
            PipelineConfig::from_toml(&format!("{MINIMAL}k_turns = 4\n"), "inline").unwrap();
        assert_eq!(cfg.validate().unwrap_err().kind(), ErrorKind::Usage);
        cfg.allow_extra_turns = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn sp_rejected_as_refinement() {
        let cfg =
            PipelineConfig::from_toml(&format!("{MINIMAL}prompt_id = \"SP\"\n"), "inline").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}bogus = 1\n"), "inline").is_err());
    }

    #[test]
    fn backend_sections_parse() {
        let http = format!(
            "{MINIMAL}[backend]\nkind = \"http\"\nbase_url = \"http://h/v1\"\nmax_retries = 5\n"
        );
        let cfg = PipelineConfig::from_toml(&http, "inline").unwrap();
        match cfg.backend {
            Some(BackendConfig::Http(h)) => {
                assert_eq!(h.base_url, "http://h/v1");
                assert_eq!(h.max_retries, 5);
            }
            other => panic!("{other:?}"),
        }
        let scripted = format!("{MINIMAL}[backend]\nkind = \"scripted\"\nfixture = \"f.jsonl\"\n");
        let cfg = PipelineConfig::from_toml(&scripted, "inline").unwrap();
        assert!(matches!(cfg.backend, Some(BackendConfig::Scripted { .. })));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = PipelineConfig::from_toml(
            &format!("{MINIMAL}[backend]\nkind = \"http\"\n[dpo]\nbeta = 0.5\n"),
            "inline",
        )
        .unwrap();
        cfg.corpus.push(CorpusSource {
            path: "c.jsonl".into(),
            eval_count: 3,
        });
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text, "echo").unwrap(), cfg);
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL, "inline").unwrap();
        cfg.apply_overrides(None, Some(9));
        assert_eq!((cfg.split_seed, cfg.subset_seed, cfg.dpo.seed), (9, 9, 9));
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(PipelineError::Usage("x".into()).exit_code(), 1);
        let missing = PipelineError::MissingPath {
            what: "corpus",
            path: "/nope".into(),
        };
        assert_eq!(missing.exit_code(), 2);
        assert!(missing.to_json().contains("/nope"));
        let transport = PipelineError::Gateway(GatewayError::Transport {
            attempts: 3,
            message: "refused".into(),
        });
        assert_eq!(transport.exit_code(), 3);
    }
}
