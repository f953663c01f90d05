//! Prompt texts are pinned by SHA-256 digests computed outside this crate.

use scl_core::corpus::{Choice, ImageKind, ImageRef, McqSample};
use scl_core::gateway::ContentPart;
use scl_core::selfcorrect::{
    correction_prompt_text, render_standard_prompt, standard_prompt_text, CorrectionPromptId,
    ANSWER_FORMAT_CUE,
};
use sha2::{Digest, Sha256};

fn hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn refinement_prompts_are_unchanged() {
    let pinned = [
        (
            CorrectionPromptId::CP,
            "c6c7f603847a3a1f042160eb6b904b574dc91967b59a1ffbf386ef837bdbb485",
        ),
        (
            CorrectionPromptId::VP1,
            "a1aff0f27263610e3e4659cf2ceb7403234e7160e998358204d720a788b0a9da",
        ),
        (
            CorrectionPromptId::VP2,
            "f59b471ee725e39ac37e3256aba8a660cc8f8fb72a6ae7443bdcd6fc59c100a1",
        ),
        (
            CorrectionPromptId::VP3,
            "e90ca41e8150ffbdae1ad43145e6b6db86978d091e5f9d860e271d6894478774",
        ),
    ];
    for (id, digest) in pinned {
        assert_eq!(hex(correction_prompt_text(id).unwrap()), digest, "{id}");
    }
}

#[test]
fn answer_cue_is_unchanged() {
    assert_eq!(
        hex(ANSWER_FORMAT_CUE),
        "ff8c1b80a6d8876a3f2bb76c540232438ce88feeee1e26aba0aad480b3e843a2"
    );
}

#[test]
fn standard_prompt_is_not_a_refinement() {
    assert!(correction_prompt_text(CorrectionPromptId::SP).is_err());
}

#[test]
fn standard_prompt_carries_question_choices_image_and_cue() {
    let s = McqSample {
        id: "q".into(),
        source: "s".into(),
        question: "How many legs?".into(),
        image: ImageRef {
            kind: ImageKind::Url,
            value: "http://x/y.png".into(),
        },
        choices: vec![Choice::new("A", "Two"), Choice::new("B", "Four")],
        answer_key: "B".into(),
    };
    assert_eq!(
        standard_prompt_text(&s),
        "How many legs?\nA. Two\nB. Four\nAnswer with the option's letter/label."
    );
    let turn = render_standard_prompt(&s);
    assert_eq!(turn.image_count(), 1);
    assert!(matches!(turn.parts[0], ContentPart::Image { .. }));
}

#[test]
fn prompt_ids_parse_both_spellings() {
    assert_eq!(
        "VP-1".parse::<CorrectionPromptId>().unwrap(),
        CorrectionPromptId::VP1
    );
    assert_eq!(
        "vp3".parse::<CorrectionPromptId>().unwrap(),
        CorrectionPromptId::VP3
    );
    assert!("VP-4".parse::<CorrectionPromptId>().is_err());
}
