use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

use super::{classify_direction, judge_answer, ChatClient, EndpointConfig, LlmError, TemplateKind, Verdict};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryInput {
    Direction { question: String, answers: String },
    Judge { question: String, ground_truth: String, predicted: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmQuery {
    pub query_id: String,
    pub input: QueryInput,
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerdictRecord {
    pub query_id: String,
    pub kind: String,
    pub label: String,
    pub raw: String,
}

impl VerdictRecord {
    pub fn new(query_id: &str, v: &Verdict) -> Self {
        Self {
            query_id: query_id.to_owned(),
            kind: v.kind.as_str().to_owned(),
            label: v.label.as_str().to_owned(),
            raw: v.raw.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    /// Successful calls, in input order.
    pub verdicts: Vec<(String, Verdict)>,
    /// Queries whose call failed outright.
    pub failures: Vec<(String, LlmError)>,
}

impl BatchOutcome {
    pub fn records(&self) -> Vec<VerdictRecord> {
        self.verdicts.iter().map(|(id, v)| VerdictRecord::new(id, v)).collect()
    }
}

fn text_field(obj: &Value, key: &str, line: usize) -> Result<String, LlmError> {
    let malformed = |reason: String| LlmError::MalformedQuery { line, reason };
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        // A list of reference answers is shown the way the templates' own
        // examples list them: quoted and comma-separated.
        Some(Value::Array(items)) => items
            .iter()
            .map(|it| it.as_str().map(|s| format!("\"{s}\"")))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join(", "))
            .ok_or_else(|| malformed(format!("'{key}' must hold strings"))),
        Some(_) => Err(malformed(format!("'{key}' must be a string or list of strings"))),
        None => Err(malformed(format!("missing '{key}'"))),
    }
}

/// Reads line-delimited JSON queries. Direction queries carry `question`
/// and `answers`; judge queries carry `question`, `ground_truth` and
/// `predicted`. Blank lines are skipped; `query_id` defaults to the line
/// number.
pub fn parse_queries(text: &str, kind: TemplateKind) -> Result<Vec<LlmQuery>, LlmError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(line).map_err(|e| LlmError::MalformedQuery {
            line: line_no,
            reason: e.to_string(),
        })?;
        let query_id = match obj.get("query_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => line_no.to_string(),
        };
        let question = text_field(&obj, "question", line_no)?;
        let input = match kind {
            TemplateKind::DirectionCritical => QueryInput::Direction {
                question,
                answers: text_field(&obj, "answers", line_no)?,
            },
            TemplateKind::JudgeQa => QueryInput::Judge {
                question,
                ground_truth: text_field(&obj, "ground_truth", line_no)?,
                predicted: text_field(&obj, "predicted", line_no)?,
            },
        };
        out.push(LlmQuery { query_id, input });
    }
    Ok(out)
}

/// Runs every query with at most `cfg.max_in_flight` calls outstanding.
pub fn run_batch(client: &dyn ChatClient, cfg: &EndpointConfig, queries: &[LlmQuery]) -> Result<BatchOutcome, LlmError> {
    cfg.validate()?;
    let slots: Vec<Mutex<Option<Result<Verdict, LlmError>>>> = queries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.max_in_flight.min(queries.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = queries.get(i) else { break };
                let result = match &q.input {
                    QueryInput::Direction { question, answers } => classify_direction(client, cfg, question, answers),
                    QueryInput::Judge {
                        question,
                        ground_truth,
                        predicted,
                    } => judge_answer(client, cfg, question, ground_truth, predicted),
                };
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    let mut outcome = BatchOutcome::default();
    for (q, slot) in queries.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every query ran") {
            Ok(v) => outcome.verdicts.push((q.query_id.clone(), v)),
            Err(e) => outcome.failures.push((q.query_id.clone(), e)),
        }
    }
    Ok(outcome)
}

pub fn write_verdict_log<W: Write>(records: &[VerdictRecord], mut out: W) -> Result<(), LlmError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
