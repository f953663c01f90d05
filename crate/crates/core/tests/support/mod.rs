//! Shared test helpers: an independent answer-extraction oracle, templated
//! response generation, and preference-pair generators.

#![allow(dead_code)]

use scl_core::corpus::{Choice, ImageKind, ImageRef, McqSample};
use scl_core::dpo::Featurizer;
use scl_core::grading::TransitionType;
use scl_core::prefset::{PreferencePair, ResponseOrigin};
use scl_core::rng::SeededRng;
use scl_core::selfcorrect::CorrectionPromptId;
use scl_core::synthetic::synthetic_corpus;

/// Reference extractor written directly from the rule descriptions, working
/// on char vectors with explicit loops (no regex, no shared helpers).
pub mod oracle {
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Fired {
        R1,
        R2,
        R3,
        R4,
    }

    fn alnum(c: char) -> bool {
        c.is_alphanumeric()
    }

    fn norm_label(s: &str) -> Vec<char> {
        let v: Vec<char> = s.to_lowercase().chars().collect();
        let strip = |c: &char| c.is_whitespace() || c.is_ascii_punctuation();
        let mut a = 0;
        let mut b = v.len();
        while a < b && strip(&v[a]) {
            a += 1;
        }
        while b > a && strip(&v[b - 1]) {
            b -= 1;
        }
        v[a..b].to_vec()
    }

    fn norm_text(s: &str) -> Vec<char> {
        let mut v: Vec<char> = s.to_lowercase().chars().collect();
        loop {
            let before = v.len();
            while v.last().is_some_and(|c| c.is_whitespace()) {
                v.pop();
            }
            while v.last().is_some_and(|c| c.is_ascii_punctuation()) {
                v.pop();
            }
            if v.len() == before {
                break;
            }
        }
        let start = v.iter().position(|c| !c.is_whitespace()).unwrap_or(v.len());
        v[start..].to_vec()
    }

    /// `needle` sits at `at` and is not glued to alphanumerics on either
    /// side (a side only matters when the needle's edge is alphanumeric).
    fn sits_at(t: &[char], needle: &[char], at: usize) -> bool {
        if needle.is_empty() || at + needle.len() > t.len() || t[at..at + needle.len()] != *needle {
            return false;
        }
        let left = !alnum(needle[0]) || at == 0 || !alnum(t[at - 1]);
        let end = at + needle.len();
        let right = !alnum(needle[needle.len() - 1]) || end == t.len() || !alnum(t[end]);
        left && right
    }

    fn occurs(t: &[char], needle: &[char]) -> bool {
        (0..t.len()).any(|i| sits_at(t, needle, i))
    }

    fn label_at(t: &[char], labels: &[Vec<char>], at: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, l) in labels.iter().enumerate() {
            if sits_at(t, l, at) && best.is_none_or(|b| l.len() > labels[b].len()) {
                best = Some(i);
            }
        }
        best
    }

    fn skip(t: &[char], mut i: usize, extra: &[char]) -> usize {
        while i < t.len() && (t[i].is_whitespace() || extra.contains(&t[i])) {
            i += 1;
        }
        i
    }

    fn starts(t: &[char], i: usize, s: &str) -> bool {
        let s: Vec<char> = s.chars().collect();
        i + s.len() <= t.len() && t[i..i + s.len()] == s[..]
    }

    /// Emphasis spans as (content start) positions: `**x**`, `__x__`, `*x*`,
    /// scanned left to right without overlap, alternatives tried in that order.
    fn emphasis_starts(t: &[char]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        'scan: while i < t.len() {
            for (open, delim) in [("**", '*'), ("__", '_')] {
                if starts(t, i, open) {
                    let mut j = i + 2;
                    while j < t.len() && t[j] != delim && t[j] != '\n' {
                        j += 1;
                    }
                    if j > i + 2 && starts(t, j, open) {
                        out.push(i + 2);
                        i = j + 2;
                        continue 'scan;
                    }
                }
            }
            if t[i] == '*' {
                let mut j = i + 1;
                while j < t.len() && t[j] != '*' && t[j] != '\n' {
                    j += 1;
                }
                if j > i + 1 && j < t.len() && t[j] == '*' {
                    out.push(i + 1);
                    i = j + 1;
                    continue 'scan;
                }
            }
            i += 1;
        }
        out
    }

    fn cue_ends(t: &[char]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < t.len() {
            let mut matched = None;
            for cue in ["final answer is", "answer is", "answer:"] {
                if starts(t, i, cue) {
                    matched = Some(cue.chars().count());
                    break;
                }
            }
            match matched {
                Some(n) => {
                    out.push(i + n);
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    fn only_one(hits: &[usize]) -> Option<usize> {
        let first = *hits.first()?;
        hits.iter().all(|h| *h == first).then_some(first)
    }

    pub fn extract(response: &str, choices: &[(String, String)]) -> Option<(String, Fired)> {
        let t: Vec<char> = response.to_lowercase().chars().collect();
        let labels: Vec<Vec<char>> = choices.iter().map(|(l, _)| norm_label(l)).collect();
        let texts: Vec<Vec<char>> = choices.iter().map(|(_, x)| norm_text(x)).collect();
        let found = |i: usize, r: Fired| Some((choices[i].0.clone(), r));

        // R1
        let mut r1: Option<(usize, usize)> = None;
        let mut positions: Vec<usize> = cue_ends(&t)
            .into_iter()
            .map(|e| skip(&t, e, &['*', '_', '"', '\'', '(', '[', ':', '`']))
            .collect();
        positions.extend(
            emphasis_starts(&t)
                .into_iter()
                .map(|s| skip(&t, s, &['(', '[', '"', '\''])),
        );
        for p in positions {
            if let Some(i) = label_at(&t, &labels, p) {
                if r1.is_none_or(|(bp, _)| p >= bp) {
                    r1 = Some((p, i));
                }
            }
        }
        if let Some((_, i)) = r1 {
            return found(i, Fired::R1);
        }

        // R2
        let mut r2 = Vec::new();
        for line in t.split(|c| *c == '\n') {
            let s = skip(line, 0, &['*', '-', '>', '#', '(']);
            let Some(i) = label_at(line, &labels, s) else {
                continue;
            };
            let after = s + labels[i].len();
            if after >= line.len() || (line[after] != '.' && line[after] != ':') {
                continue;
            }
            let body = skip(line, after + 1, &['*']);
            let want = &texts[i];
            if !want.is_empty()
                && body + want.len() <= line.len()
                && line[body..body + want.len()] == want[..]
            {
                r2.push(i);
            }
        }
        if let Some(i) = only_one(&r2) {
            return found(i, Fired::R2);
        }

        // R3
        let r3: Vec<usize> = (0..labels.len())
            .filter(|&i| occurs(&t, &labels[i]))
            .collect();
        if r3.len() == 1 {
            return found(r3[0], Fired::R3);
        }

        // R4
        let r4: Vec<usize> = (0..texts.len())
            .filter(|&i| occurs(&t, &texts[i]))
            .collect();
        if r4.len() == 1 {
            return found(r4[0], Fired::R4);
        }
        None
    }
}

const TEXT_POOL: &[&str] = &[
    "red",
    "dark red",
    "blue",
    "green",
    "three",
    "four",
    "a cat",
    "the dog",
    "circle",
    "kitchen",
    "Bathroom",
    "E. coli",
    "none of the above",
    "sphere",
    "cube",
];

const FILLER: &[&str] = &[
    "Let me think.",
    "Looking at the image,",
    "There is a cat on the mat.",
    "I see an object.",
    "Based on the picture",
    "Hmm, between the options",
    "It could be the second one.",
    "I cannot determine this.",
    "Maybe.",
    "Option analysis:",
];

/// Choices with 3–5 labels (upper- or lowercase letters, sometimes digits)
/// and texts from a pool that includes overlapping phrases.
pub fn templated_choices(rng: &mut SeededRng) -> Vec<(String, String)> {
    let n = 3 + rng.below(3) as usize;
    let style = rng.below(4);
    let mut pool: Vec<&str> = TEXT_POOL.to_vec();
    rng.shuffle(&mut pool);
    (0..n)
        .map(|i| {
            let label = match style {
                0 | 1 => ((b'A' + i as u8) as char).to_string(),
                2 => ((b'a' + i as u8) as char).to_string(),
                _ => (i + 1).to_string(),
            };
            (label, pool[i].to_string())
        })
        .collect()
}

fn random_case(rng: &mut SeededRng, s: &str) -> String {
    match rng.below(3) {
        0 => s.to_lowercase(),
        1 => s.to_uppercase(),
        _ => s.to_string(),
    }
}

/// One response fragment naming `choices[k]` in a random style.
fn fragment(rng: &mut SeededRng, choices: &[(String, String)], k: usize) -> String {
    let (l, t) = &choices[k];
    let l = random_case(rng, l);
    match rng.below(16) {
        0 => format!("The answer is {l}."),
        1 => format!("The final answer is **{l}**. {t}"),
        2 => format!("Answer: ({l})"),
        3 => format!("**{l}**"),
        4 => format!("*{l}*"),
        5 => format!("__{l}__ is my pick"),
        6 => format!("\n{l}. {t}"),
        7 => format!("\n- {l}: {t}"),
        8 => format!("option {l}"),
        9 => format!("({l})"),
        10 => format!("it is {t}."),
        11 => format!("I think {}", t.to_uppercase()),
        12 => format!("\n**{l}.** {t}"),
        13 => format!("answer is \"{l}\""),
        14 => format!("{l}{t}"),
        _ => format!("the answer:{l}"),
    }
}

/// A templated response: fillers plus 0–3 fragments naming random choices.
pub fn templated_response(rng: &mut SeededRng, choices: &[(String, String)]) -> String {
    let mut parts = Vec::new();
    let pieces = rng.below(5) as usize;
    for _ in 0..pieces {
        if rng.chance(0.4) {
            parts.push(FILLER[rng.below(FILLER.len() as u64) as usize].to_string());
        } else {
            let k = rng.below(choices.len() as u64) as usize;
            parts.push(fragment(rng, choices, k));
        }
    }
    parts.join(" ")
}

pub fn to_choices(pairs: &[(String, String)]) -> Vec<Choice> {
    pairs
        .iter()
        .map(|(l, t)| Choice::new(l.clone(), t.clone()))
        .collect()
}

/// A pair whose preferred and disfavored responses share one template and
/// differ only in the chosen option.
pub fn clean_pair(sample: &McqSample, wrong: &Choice) -> PreferencePair {
    let key = sample.choice(&sample.answer_key).unwrap();
    PreferencePair {
        sample_id: sample.id.clone(),
        source: sample.source.clone(),
        question: sample.question.clone(),
        image: sample.image.clone(),
        choices: sample.choices.clone(),
        answer_key: sample.answer_key.clone(),
        preferred: format!("The answer is {}. {}", key.label, key.text),
        disfavored: format!("The answer is {}. {}", wrong.label, wrong.text),
        transition: TransitionType::Type2,
        preferred_origin: ResponseOrigin::RR,
        prompt_id: CorrectionPromptId::VP1,
        model_id: "synthetic".into(),
    }
}

/// `n` clean pairs over the synthetic corpus.
pub fn clean_pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    synthetic_corpus(n, seed)
        .iter()
        .map(|s| {
            let wrong: Vec<&Choice> = s
                .choices
                .iter()
                .filter(|c| c.label != s.answer_key)
                .collect();
            clean_pair(s, wrong[rng.below(wrong.len() as u64) as usize])
        })
        .collect()
}

/// `n` pairs with a consistent style signal: the preferred side answers
/// confidently, the disfavored side hedges.
pub fn styled_pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    clean_pairs(n, seed)
        .into_iter()
        .map(|mut p| {
            p.preferred = format!("I am confident: {}", p.preferred);
            p.disfavored = p
                .disfavored
                .replace("The answer is", "Perhaps, though unsure, it could be");
            p
        })
        .collect()
}

const VOCAB: &[&str] = &[
    "red", "blue", "cat", "dog", "left", "right", "two", "three", "yes", "no", "tree", "car",
];

fn words(rng: &mut SeededRng, min: usize, max: usize) -> String {
    let n = min + rng.below((max - min + 1) as u64) as usize;
    (0..n)
        .map(|_| VOCAB[rng.below(VOCAB.len() as u64) as usize])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random pairs over a small vocabulary; responses may share tokens.
pub fn random_pairs(rng: &mut SeededRng, n: usize) -> Vec<PreferencePair> {
    (0..n)
        .map(|i| {
            let sample = McqSample {
                id: format!("r{i:03}"),
                source: "random".into(),
                question: words(rng, 2, 5),
                image: ImageRef {
                    kind: ImageKind::Url,
                    value: "u".into(),
                },
                choices: vec![Choice::new("A", "x"), Choice::new("B", "y")],
                answer_key: "A".into(),
            };
            let mut pair = clean_pair(&sample, &sample.choices[1]);
            pair.preferred = words(rng, 1, 4);
            pair.disfavored = words(rng, 1, 4);
            pair
        })
        .collect()
}

pub fn random_weights(rng: &mut SeededRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.symmetric(scale)).collect()
}

pub fn featurizer(dim: usize) -> Featurizer {
    Featurizer::new(dim)
}
