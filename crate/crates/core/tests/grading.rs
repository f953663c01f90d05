mod support;

use proptest::prelude::*;
use scl_core::gateway::GenerationSettings;
use scl_core::grading::{self, Rule, TransitionType, TypeCounts};
use scl_core::rng::SeededRng;
use scl_core::selfcorrect::{run_batch, CorrectionPromptId};
use scl_core::synthetic::transition_fixture;
use support::oracle::{self, Fired};

fn rule_of(f: Fired) -> Rule {
    match f {
        Fired::R1 => Rule::CueOrEmphasis,
        Fired::R2 => Rule::ChoiceLine,
        Fired::R3 => Rule::StandaloneLabel,
        Fired::R4 => Rule::ChoiceText,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn extraction_agrees_with_oracle(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let choices = support::templated_choices(&mut rng);
        let response = support::templated_response(&mut rng, &choices);
        let want = oracle::extract(&response, &choices).map(|(l, f)| (l, rule_of(f)));
        let got = grading::extract_choice_with_rule(&response, &support::to_choices(&choices));
        prop_assert_eq!(got, want, "{:?} / {:?}", response, choices);
    }

    #[test]
    fn extraction_ignores_letter_case(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let pairs = support::templated_choices(&mut rng);
        let response = support::templated_response(&mut rng, &pairs);
        let choices = support::to_choices(&pairs);
        prop_assert_eq!(
            grading::extract_choice(&response, &choices),
            grading::extract_choice(&response.to_uppercase(), &choices)
        );
    }
}

#[test]
fn fixture_reproduces_requested_transition_counts() {
    let want = [
        (TransitionType::Type1, 7),
        (TransitionType::Type2, 5),
        (TransitionType::Type3, 4),
        (TransitionType::Type4, 3),
        (TransitionType::Undetermined, 2),
    ];
    let (samples, backend) = transition_fixture(&want, 17);
    let outcome = run_batch(
        &backend,
        &samples,
        CorrectionPromptId::CP,
        1,
        &GenerationSettings::default(),
        2,
    );
    let counts: TypeCounts = outcome.records.iter().map(|r| r.transition).collect();
    assert_eq!(
        (
            counts.type1,
            counts.type2,
            counts.type3,
            counts.type4,
            counts.undetermined
        ),
        (7, 5, 4, 3, 2)
    );
}
