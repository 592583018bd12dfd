//! Question classification and answer grading through a chat-completion
//! endpoint.
//!
//! Both prompt templates are compiled in verbatim from `templates/`. A reply
//! is read as a verdict from its first non-whitespace character only; any
//! other reply is kept as [`Label::Unparseable`] rather than retried.

mod batch;
mod client;

pub use batch::{parse_queries, run_batch, write_verdict_log, BatchOutcome, LlmQuery, QueryInput, VerdictRecord};
pub use client::{
    classify_direction, complete_with_retries, judge_answer, ChatClient, ChatError, ChatMessage, EndpointConfig,
    HttpChatClient,
};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("missing template field '{0}'")]
    MissingField(String),
    #[error("endpoint failed after {attempts} attempt(s): {message}")]
    EndpointError { attempts: u32, message: String },
    #[error("no parseable verdicts")]
    NoParseableVerdicts,
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("query {line}: {reason}")]
    MalformedQuery { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    DirectionCritical,
    JudgeQa,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::DirectionCritical => "direction_critical",
            TemplateKind::JudgeQa => "judge_qa",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const DIRECTION_CRITICAL: &str = include_str!("../../templates/direction_critical.txt");
const JUDGE_QA: &str = include_str!("../../templates/judge_qa.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    text: &'static str,
}

impl PromptTemplate {
    pub fn direction_critical() -> Self {
        Self::for_kind(TemplateKind::DirectionCritical)
    }

    pub fn judge_qa() -> Self {
        Self::for_kind(TemplateKind::JudgeQa)
    }

    pub fn for_kind(kind: TemplateKind) -> Self {
        let text = match kind {
            TemplateKind::DirectionCritical => DIRECTION_CRITICAL,
            TemplateKind::JudgeQa => JUDGE_QA,
        };
        Self { kind, text }
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn text(&self) -> &'static str {
        self.text
    }

    pub fn placeholders(&self) -> &'static [&'static str] {
        match self.kind {
            TemplateKind::DirectionCritical => &["question", "gt_answer"],
            TemplateKind::JudgeQa => &["question", "ground_truth", "predicted_answer"],
        }
    }
}

/// Substitutes `{name}` placeholders in a single pass, so field values are
/// never themselves expanded. Extra fields are ignored.
pub fn render_prompt(t: &PromptTemplate, fields: &[(&str, &str)]) -> Result<String, LlmError> {
    let names = t.placeholders();
    for name in names {
        if !fields.iter().any(|(k, _)| k == name) {
            return Err(LlmError::MissingField((*name).to_owned()));
        }
    }
    let text = t.text();
    let mut out = String::with_capacity(text.len() + fields.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').map(|close| &after[..close]).filter(|name| names.contains(name));
        match hit {
            Some(name) => {
                let value = fields.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or_default();
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    A,
    B,
    Unparseable,
}

impl Label {
    pub fn parse(reply: &str) -> Self {
        match reply.trim_start().chars().next() {
            Some('A') => Label::A,
            Some('B') => Label::B,
            _ => Label::Unparseable,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::Unparseable => "Unparseable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub kind: TemplateKind,
    pub label: Label,
    pub raw: String,
}

impl Verdict {
    pub fn from_reply(kind: TemplateKind, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        Self {
            kind,
            label: Label::parse(&raw),
            raw,
        }
    }

    /// Class name the label stands for under this template.
    pub fn meaning(&self) -> &'static str {
        match (self.kind, self.label) {
            (TemplateKind::DirectionCritical, Label::A) => "NEED_LATERAL_DIRECTION",
            (TemplateKind::DirectionCritical, Label::B) => "DO_NOT_NEED_LATERAL_DIRECTION",
            (TemplateKind::JudgeQa, Label::A) => "CORRECT",
            (TemplateKind::JudgeQa, Label::B) => "INCORRECT",
            (_, Label::Unparseable) => "UNPARSEABLE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    /// `a / (a + b)`.
    pub fraction: f64,
    pub a: usize,
    pub b: usize,
    pub unparseable: usize,
}

/// Share of `A` verdicts among parseable ones.
pub fn aggregate<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> Result<Aggregate, LlmError> {
    let (mut a, mut b, mut unparseable) = (0, 0, 0);
    for v in verdicts {
        match v.label {
            Label::A => a += 1,
            Label::B => b += 1,
            Label::Unparseable => unparseable += 1,
        }
    }
    if a + b == 0 {
        return Err(LlmError::NoParseableVerdicts);
    }
    Ok(Aggregate {
        fraction: a as f64 / (a + b) as f64,
        a,
        b,
        unparseable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(label: &str) -> Verdict {
        Verdict::from_reply(TemplateKind::JudgeQa, label)
    }

    #[test]
    fn both_templates_end_with_the_instruction() {
        for t in [PromptTemplate::direction_critical(), PromptTemplate::judge_qa()] {
            assert!(t.text().trim_end().ends_with("with no text around it."));
        }
    }

    #[test]
    fn render_fills_code_block() {
        let out = render_prompt(&PromptTemplate::direction_critical(), &[("question", "Q"), ("gt_answer", "A1")]).unwrap();
        assert!(out.contains("Question: Q\nAnswers: A1\n"));
        assert!(!out.contains("{question}") && !out.contains("{gt_answer}"));
    }

    #[test]
    fn render_is_single_pass_and_allows_empty() {
        let t = PromptTemplate::direction_critical();
        let out = render_prompt(&t, &[("question", "{gt_answer}"), ("gt_answer", "x")]).unwrap();
        assert!(out.contains("Question: {gt_answer}\nAnswers: x\n"));
        assert!(render_prompt(&t, &[("question", ""), ("gt_answer", "")]).is_ok());
    }

    #[test]
    fn missing_field() {
        let err = render_prompt(&PromptTemplate::judge_qa(), &[("question", "q"), ("ground_truth", "g")]).unwrap_err();
        assert!(matches!(err, LlmError::MissingField(f) if f == "predicted_answer"));
    }

    #[test]
    fn labels() {
        assert_eq!(Label::parse("A"), Label::A);
        assert_eq!(Label::parse(" B\n"), Label::B);
        assert_eq!(Label::parse("CORRECT"), Label::Unparseable);
        assert_eq!(Label::parse(""), Label::Unparseable);
        assert_eq!(Verdict::from_reply(TemplateKind::DirectionCritical, "A").meaning(), "NEED_LATERAL_DIRECTION");
        assert_eq!(Verdict::from_reply(TemplateKind::JudgeQa, " B").meaning(), "INCORRECT");
    }

    #[test]
    fn aggregates() {
        let r = aggregate(&[v("A"), v("A"), v("B")]).unwrap();
        assert!((r.fraction - 2.0 / 3.0).abs() < 1e-15);
        let r = aggregate(&[v("A"), v("?"), v("B")]).unwrap();
        assert_eq!((r.fraction, r.unparseable), (0.5, 1));
        assert!(matches!(aggregate(&[v("x")]), Err(LlmError::NoParseableVerdicts)));
        assert!(matches!(aggregate(&[]), Err(LlmError::NoParseableVerdicts)));
    }
}
