use proptest::prelude::*;
use resistkit_core::prompting::{render_reply, PromptTemplates};
use resistkit_core::taxonomy::{Label, Task};
use resistkit_inference::{parse_completion, Prediction, RawCompletion};

fn task_and_label() -> impl Strategy<Value = (Task, Label)> {
    prop_oneof![
        prop::sample::select(Label::BINARY.to_vec()).prop_map(|l| (Task::Binary, l)),
        prop::sample::select(Label::FINE.to_vec()).prop_map(|l| (Task::Fine, l)),
    ]
}

proptest! {
    #[test]
    fn rendered_replies_parse_back((task, label) in task_and_label(), rationale in "[A-Za-z][A-Za-z ,;'()]{0,80}[A-Za-z)]", attempts in 1u32..5) {
        let templates = PromptTemplates::english();
        let expected = Prediction {
            sample_id: "s:9".into(),
            task,
            label: label.into(),
            rationale: rationale.trim().to_string(),
            valid: true,
            raw_text: render_reply(label, &rationale, &templates),
            latency_ms: 12,
            attempts,
        };
        let raw = RawCompletion {
            sample_id: expected.sample_id.clone(),
            fingerprint: "f".into(),
            text: expected.raw_text.clone(),
            latency_ms: 12,
            attempts,
        };
        prop_assert_eq!(parse_completion(&raw, task), expected);
    }

    #[test]
    fn parsing_never_panics(text in "\\PC{0,200}", binary: bool) {
        let task = if binary { Task::Binary } else { Task::Fine };
        let raw = RawCompletion { sample_id: "s".into(), fingerprint: String::new(), text: text.clone(), latency_ms: 0, attempts: 1 };
        let p = parse_completion(&raw, task);
        prop_assert_eq!(p.valid, p.label.is_valid());
        prop_assert_eq!(p.raw_text, text);
    }
}
