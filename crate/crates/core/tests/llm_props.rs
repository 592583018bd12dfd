use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use egopose_core::llm::{
    aggregate, classify_direction, render_prompt, ChatClient, ChatError, ChatMessage, EndpointConfig, Label, LlmError,
    PromptTemplate, TemplateKind, Verdict,
};

const QUESTION: &str = "What is on the left side of the bed when facing the window?";
const ANSWERS: &str = "\"nightstand\", \"lamp\"";

/// Field text without line breaks, the delimiter between template fields.
fn field() -> impl Strategy<Value = String> {
    "[^\r\n]{0,40}"
}

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just("A"), Just("B"), Just(" A."), Just("b"), Just(""), Just("C")]
        .prop_map(|r| Verdict::from_reply(TemplateKind::JudgeQa, r))
}

proptest! {
    #[test]
    fn direction_prompt_is_injective(a in (field(), field()), b in (field(), field())) {
        let t = PromptTemplate::direction_critical();
        let ra = render_prompt(&t, &[("question", &a.0), ("gt_answer", &a.1)]).unwrap();
        let rb = render_prompt(&t, &[("question", &b.0), ("gt_answer", &b.1)]).unwrap();
        prop_assert_eq!(a == b, ra == rb);
    }

    #[test]
    fn judge_prompt_is_injective(a in (field(), field(), field()), b in (field(), field(), field())) {
        let t = PromptTemplate::judge_qa();
        let render = |x: &(String, String, String)| {
            render_prompt(&t, &[("question", &x.0), ("ground_truth", &x.1), ("predicted_answer", &x.2)]).unwrap()
        };
        prop_assert_eq!(a == b, render(&a) == render(&b));
    }

    #[test]
    fn placeholders_in_values_stay_literal(q in field()) {
        let t = PromptTemplate::direction_critical();
        let out = render_prompt(&t, &[("question", "{gt_answer}"), ("gt_answer", &q)]).unwrap();
        let literal = out.contains("Question: {gt_answer}\n");
        prop_assert!(literal);
    }

    #[test]
    fn aggregate_is_order_free_and_bounded(mut vs in prop::collection::vec(verdict(), 0..40), seed in any::<u64>()) {
        let first = aggregate(&vs);
        vs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let second = aggregate(&vs);
        match (first, second) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x, y);
                prop_assert!((0.0..=1.0).contains(&x.fraction));
                prop_assert_eq!(x.a + x.b + x.unparseable, vs.len());
            }
            (Err(LlmError::NoParseableVerdicts), Err(LlmError::NoParseableVerdicts)) => {
                prop_assert!(vs.iter().all(|v| v.label == Label::Unparseable));
            }
            other => prop_assert!(false, "{other:?}"),
        }
    }
}

#[test]
fn rendered_templates_match_goldens() {
    let direction = render_prompt(&PromptTemplate::direction_critical(), &[("question", QUESTION), ("gt_answer", ANSWERS)]).unwrap();
    assert_eq!(direction, include_str!("golden/direction_critical_rendered.txt"));
    let judge = render_prompt(
        &PromptTemplate::judge_qa(),
        &[("question", QUESTION), ("ground_truth", ANSWERS), ("predicted_answer", "a small nightstand")],
    )
    .unwrap();
    assert_eq!(judge, include_str!("golden/judge_qa_rendered.txt"));
}

#[test]
fn missing_fields_are_reported() {
    let err = render_prompt(&PromptTemplate::judge_qa(), &[("question", "q"), ("ground_truth", "g")]).unwrap_err();
    assert!(matches!(err, LlmError::MissingField(f) if f == "predicted_answer"));
}

/// Replies with a fixed text and counts calls.
struct Fixed(&'static str, AtomicUsize);

impl ChatClient for Fixed {
    fn complete(&self, _model: &str, _messages: &[ChatMessage]) -> Result<String, ChatError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        Ok(self.0.to_owned())
    }
}

#[test]
fn unparseable_replies_are_not_retried() {
    let client = Fixed("Maybe", AtomicUsize::new(0));
    let cfg = EndpointConfig { max_retries: 5, ..EndpointConfig::default() };
    let v = classify_direction(&client, &cfg, QUESTION, ANSWERS).unwrap();
    assert_eq!(v.label, Label::Unparseable);
    assert_eq!(client.1.load(Ordering::SeqCst), 1);
}
