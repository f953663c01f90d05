//! Answer extraction, grading, and correctness-transition classification.
//!
//! Extraction applies four rules in priority order and returns the first hit:
//!
//! * **R1** cue or emphasis: a label opening a `**bold**`, `__bold__` or
//!   `*italic*` span, or following `final answer is` / `answer is` /
//!   `answer:`. Among all R1 hits the one nearest the end of the text wins.
//! * **R2** choice line: a line that starts with `<label>.` or `<label>:`
//!   followed by that choice's text. Fires only when exactly one distinct
//!   label is found this way.
//! * **R3** standalone label: a label delimited by non-alphanumeric
//!   characters, when exactly one distinct label appears standalone.
//! * **R4** choice text: a choice's full text appears (word-delimited), when
//!   exactly one choice's text does.
//!
//! All matching is case-insensitive; labels are compared after trimming
//! surrounding whitespace and punctuation.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Choice;

/// Embedded in trace and dataset files so results can be tied to a rule set.
pub const RULES_VERSION: &str = "extract-r1r2r3r4/1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum ParsedLabel {
    Label(String),
    Unparseable,
}

impl From<Option<String>> for ParsedLabel {
    fn from(v: Option<String>) -> Self {
        v.map_or(ParsedLabel::Unparseable, ParsedLabel::Label)
    }
}

impl From<ParsedLabel> for Option<String> {
    fn from(p: ParsedLabel) -> Self {
        match p {
            ParsedLabel::Label(l) => Some(l),
            ParsedLabel::Unparseable => None,
        }
    }
}

impl ParsedLabel {
    pub fn label(&self) -> Option<&str> {
        match self {
            ParsedLabel::Label(l) => Some(l),
            ParsedLabel::Unparseable => None,
        }
    }

    pub fn is_parseable(&self) -> bool {
        matches!(self, ParsedLabel::Label(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionType {
    /// correct ⇒ correct
    Type1,
    /// incorrect ⇒ correct
    Type2,
    /// correct ⇒ incorrect
    Type3,
    /// incorrect ⇒ incorrect
    Type4,
    Undetermined,
}

impl TransitionType {
    pub const ALL: [TransitionType; 5] = [
        TransitionType::Type1,
        TransitionType::Type2,
        TransitionType::Type3,
        TransitionType::Type4,
        TransitionType::Undetermined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionType::Type1 => "Type1",
            TransitionType::Type2 => "Type2",
            TransitionType::Type3 => "Type3",
            TransitionType::Type4 => "Type4",
            TransitionType::Undetermined => "Undetermined",
        }
    }
}

/// Count of records per transition type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    #[serde(rename = "Type1")]
    pub type1: usize,
    #[serde(rename = "Type2")]
    pub type2: usize,
    #[serde(rename = "Type3")]
    pub type3: usize,
    #[serde(rename = "Type4")]
    pub type4: usize,
    #[serde(rename = "Undetermined")]
    pub undetermined: usize,
}

impl TypeCounts {
    pub fn add(&mut self, t: TransitionType) {
        *self.slot(t) += 1;
    }

    fn slot(&mut self, t: TransitionType) -> &mut usize {
        match t {
            TransitionType::Type1 => &mut self.type1,
            TransitionType::Type2 => &mut self.type2,
            TransitionType::Type3 => &mut self.type3,
            TransitionType::Type4 => &mut self.type4,
            TransitionType::Undetermined => &mut self.undetermined,
        }
    }

    pub fn get(&self, t: TransitionType) -> usize {
        match t {
            TransitionType::Type1 => self.type1,
            TransitionType::Type2 => self.type2,
            TransitionType::Type3 => self.type3,
            TransitionType::Type4 => self.type4,
            TransitionType::Undetermined => self.undetermined,
        }
    }

    pub fn total(&self) -> usize {
        self.type1 + self.type2 + self.type3 + self.type4 + self.undetermined
    }
}

impl FromIterator<TransitionType> for TypeCounts {
    fn from_iter<I: IntoIterator<Item = TransitionType>>(iter: I) -> Self {
        let mut c = TypeCounts::default();
        for t in iter {
            c.add(t);
        }
        c
    }
}

/// Which extraction rule produced a label. Exposed for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    CueOrEmphasis,
    ChoiceLine,
    StandaloneLabel,
    ChoiceText,
}

/// Trim whitespace and surrounding punctuation, then lowercase.
pub fn normalize_label(label: &str) -> String {
    label
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase()
}

fn normalize_text(text: &str) -> String {
    text.trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_lowercase()
}

static CUE: Lazy<Regex> = Lazy::new(|| Regex::new(r"final answer is|answer is|answer:").unwrap());
static EMPHASIS: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\*\*([^*\n]+?)\*\*|__([^_\n]+?)__|\*([^*\n]+?)\*").unwrap());

fn is_alnum_at_end(s: &str) -> bool {
    s.chars().next_back().is_some_and(char::is_alphanumeric)
}

fn is_alnum_at_start(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_alphanumeric)
}

/// `needle` occupies `text[start..start+needle.len()]` without running into
/// neighbouring alphanumerics.
fn delimited(text: &str, start: usize, needle: &str) -> bool {
    let end = start + needle.len();
    let left_ok = !is_alnum_at_start(needle) || !is_alnum_at_end(&text[..start]);
    let right_ok = !is_alnum_at_end(needle) || !is_alnum_at_start(&text[end..]);
    left_ok && right_ok
}

fn contains_delimited(text: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    text.match_indices(needle)
        .any(|(start, _)| delimited(text, start, needle))
}

struct Prepared<'a> {
    choices: &'a [Choice],
    norm_labels: Vec<String>,
    norm_texts: Vec<String>,
}

impl<'a> Prepared<'a> {
    fn new(choices: &'a [Choice]) -> Self {
        Self {
            choices,
            norm_labels: choices.iter().map(|c| normalize_label(&c.label)).collect(),
            norm_texts: choices.iter().map(|c| normalize_text(&c.text)).collect(),
        }
    }

    /// Longest label that starts exactly at `pos` and is delimited there.
    fn label_at(&self, text: &str, pos: usize) -> Option<usize> {
        let rest = &text[pos..];
        self.norm_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                !l.is_empty() && rest.starts_with(l.as_str()) && delimited(text, pos, l)
            })
            .max_by_key(|(_, l)| l.len())
            .map(|(i, _)| i)
    }
}

fn skip_chars(text: &str, mut pos: usize, skip: &[char]) -> usize {
    for c in text[pos..].chars() {
        if c.is_whitespace() || skip.contains(&c) {
            pos += c.len_utf8();
        } else {
            break;
        }
    }
    pos
}

fn rule_cue_or_emphasis(p: &Prepared, text: &str) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    let mut consider = |pos: usize| {
        if let Some(i) = p.label_at(text, pos) {
            if best.is_none_or(|(b, _)| pos >= b) {
                best = Some((pos, i));
            }
        }
    };
    for m in CUE.find_iter(text) {
        consider(skip_chars(
            text,
            m.end(),
            &['*', '_', '"', '\'', '(', '[', ':', '`'],
        ));
    }
    for caps in EMPHASIS.captures_iter(text) {
        let inner = caps
            .get(1)
            .or_else(|| caps.get(2))
            .or_else(|| caps.get(3))
            .unwrap();
        consider(skip_chars(text, inner.start(), &['(', '[', '"', '\'']));
    }
    best.map(|(_, i)| i)
}

fn unique<I: IntoIterator<Item = usize>>(hits: I) -> Option<usize> {
    let mut found: Option<usize> = None;
    for h in hits {
        match found {
            None => found = Some(h),
            Some(f) if f == h => {}
            Some(_) => return None,
        }
    }
    found
}

fn rule_choice_line(p: &Prepared, text: &str) -> Option<usize> {
    let hits = text.lines().filter_map(|line| {
        let start = skip_chars(line, 0, &['*', '-', '>', '#', '(']);
        let i = p.label_at(line, start)?;
        let after = start + p.norm_labels[i].len();
        let delim = line[after..].chars().next()?;
        if delim != '.' && delim != ':' {
            return None;
        }
        let body = &line[skip_chars(line, after + 1, &['*'])..];
        let choice_text = &p.norm_texts[i];
        (!choice_text.is_empty() && body.starts_with(choice_text.as_str())).then_some(i)
    });
    unique(hits)
}

fn rule_standalone_label(p: &Prepared, text: &str) -> Option<usize> {
    unique(
        p.norm_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| contains_delimited(text, l))
            .map(|(i, _)| i),
    )
}

fn rule_choice_text(p: &Prepared, text: &str) -> Option<usize> {
    unique(
        p.norm_texts
            .iter()
            .enumerate()
            .filter(|(_, t)| contains_delimited(text, t))
            .map(|(i, _)| i),
    )
}

type RuleFn = fn(&Prepared, &str) -> Option<usize>;

/// Extract a label and report which rule fired.
pub fn extract_choice_with_rule(response: &str, choices: &[Choice]) -> Option<(String, Rule)> {
    let p = Prepared::new(choices);
    let text = response.to_lowercase();
    let rules: [(Rule, RuleFn); 4] = [
        (Rule::CueOrEmphasis, rule_cue_or_emphasis),
        (Rule::ChoiceLine, rule_choice_line),
        (Rule::StandaloneLabel, rule_standalone_label),
        (Rule::ChoiceText, rule_choice_text),
    ];
    rules
        .iter()
        .find_map(|(rule, f)| f(&p, &text).map(|i| (p.choices[i].label.clone(), *rule)))
}

/// Extract the chosen option from free-form model text.
pub fn extract_choice(response: &str, choices: &[Choice]) -> ParsedLabel {
    extract_choice_with_rule(response, choices)
        .map(|(l, _)| l)
        .into()
}

pub fn grade(parsed: &ParsedLabel, answer_key: &str) -> bool {
    parsed.label().is_some_and(|l| l == answer_key)
}

pub fn classify_transition(ir: &ParsedLabel, rr: &ParsedLabel, answer_key: &str) -> TransitionType {
    if !ir.is_parseable() || !rr.is_parseable() {
        return TransitionType::Undetermined;
    }
    match (grade(ir, answer_key), grade(rr, answer_key)) {
        (true, true) => TransitionType::Type1,
        (false, true) => TransitionType::Type2,
        (true, false) => TransitionType::Type3,
        (false, false) => TransitionType::Type4,
    }
}
