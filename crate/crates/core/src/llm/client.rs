use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use super::{render_prompt, LlmError, PromptTemplate, TemplateKind, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatError {
    /// Network or server-side failure; worth retrying.
    Transport(String),
    /// The endpoint understood and refused the request.
    Rejected(String),
}

impl std::fmt::Display for ChatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChatError::Transport(m) => write!(f, "transport error: {m}"),
            ChatError::Rejected(m) => write!(f, "request rejected: {m}"),
        }
    }
}

/// One chat-completion round trip. Implementations must be shareable
/// across the batch worker threads.
pub trait ChatClient: Send + Sync {
    fn complete(&self, model: &str, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token, if any.
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff: Duration,
    /// Sent as a `Reasoning: <effort>` system message.
    pub reasoning_effort: Option<String>,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-oss-20b".into(),
            token_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            retry_backoff: Duration::from_millis(500),
            reasoning_effort: Some("medium".into()),
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(LlmError::InvalidConfig(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn messages(&self, prompt: String) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(2);
        if let Some(effort) = &self.reasoning_effort {
            messages.push(ChatMessage::system(format!("Reasoning: {effort}")));
        }
        messages.push(ChatMessage::user(prompt));
        messages
    }
}

/// OpenAI-compatible endpoint over HTTP.
pub struct HttpChatClient {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
}

impl HttpChatClient {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let token = match &cfg.token_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| LlmError::InvalidConfig(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: cfg.url(),
            token,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, model: &str, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let body = json!({ "model": model, "messages": messages, "temperature": 0 });
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(ChatError::Transport(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(ChatError::Rejected(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ChatError::Rejected(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ChatError::Rejected("response has no choices[0].message.content".into()))
    }
}

/// Sends `prompt`, retrying transport failures up to `cfg.max_retries`
/// times. Whatever text comes back is returned as is.
pub fn complete_with_retries(client: &dyn ChatClient, cfg: &EndpointConfig, prompt: String) -> Result<String, LlmError> {
    let messages = cfg.messages(prompt);
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(&cfg.model, &messages) {
            Ok(reply) => return Ok(reply),
            Err(ChatError::Transport(msg)) if attempts <= cfg.max_retries => {
                log::warn!("chat attempt {attempts} failed: {msg}; retrying");
                if !cfg.retry_backoff.is_zero() {
                    std::thread::sleep(cfg.retry_backoff * attempts);
                }
            }
            Err(err) => {
                return Err(LlmError::EndpointError {
                    attempts,
                    message: err.to_string(),
                })
            }
        }
    }
}

pub fn classify_direction(
    client: &dyn ChatClient,
    cfg: &EndpointConfig,
    question: &str,
    answers: &str,
) -> Result<Verdict, LlmError> {
    let prompt = render_prompt(&PromptTemplate::direction_critical(), &[("question", question), ("gt_answer", answers)])?;
    let reply = complete_with_retries(client, cfg, prompt)?;
    Ok(Verdict::from_reply(TemplateKind::DirectionCritical, reply))
}

pub fn judge_answer(
    client: &dyn ChatClient,
    cfg: &EndpointConfig,
    question: &str,
    ground_truth: &str,
    predicted: &str,
) -> Result<Verdict, LlmError> {
    let prompt = render_prompt(
        &PromptTemplate::judge_qa(),
        &[("question", question), ("ground_truth", ground_truth), ("predicted_answer", predicted)],
    )?;
    let reply = complete_with_retries(client, cfg, prompt)?;
    Ok(Verdict::from_reply(TemplateKind::JudgeQa, reply))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Label;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, ChatError>>>,
        calls: AtomicU32,
        seen: Mutex<Vec<Vec<ChatMessage>>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<String, ChatError>>) -> Self {
            replies.reverse();
            Self {
                replies: Mutex::new(replies),
                calls: AtomicU32::new(0),
                seen: Mutex::new(vec![]),
            }
        }
    }

    impl ChatClient for Scripted {
        fn complete(&self, _model: &str, messages: &[ChatMessage]) -> Result<String, ChatError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(messages.to_vec());
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    fn cfg() -> EndpointConfig {
        EndpointConfig {
            retry_backoff: Duration::ZERO,
            max_retries: 2,
            ..EndpointConfig::default()
        }
    }

    #[test]
    fn classify_replies() {
        for (reply, meaning) in [("A", "NEED_LATERAL_DIRECTION"), (" B\n", "DO_NOT_NEED_LATERAL_DIRECTION"), ("CORRECT", "UNPARSEABLE")] {
            let c = Scripted::new(vec![Ok(reply.into())]);
            let v = classify_direction(&c, &cfg(), "q", "a").unwrap();
            assert_eq!(v.meaning(), meaning);
            assert_eq!(v.raw, reply);
        }
    }

    #[test]
    fn judge_replies() {
        for (reply, label) in [("A", Label::A), ("\tB", Label::B), ("CORRECT", Label::Unparseable)] {
            let c = Scripted::new(vec![Ok(reply.into())]);
            assert_eq!(judge_answer(&c, &cfg(), "q", "g", "p").unwrap().label, label);
        }
    }

    #[test]
    fn reasoning_system_message_precedes_prompt() {
        let c = Scripted::new(vec![Ok("A".into())]);
        classify_direction(&c, &cfg(), "where?", "left").unwrap();
        let seen = c.seen.lock().unwrap();
        assert_eq!(seen[0][0], ChatMessage::system("Reasoning: medium"));
        assert_eq!(seen[0][1].role, "user");
        assert!(seen[0][1].content.contains("Question: where?\nAnswers: left\n"));
    }

    #[test]
    fn retries_transport_only() {
        let c = Scripted::new(vec![Err(ChatError::Transport("reset".into())), Ok("B".into())]);
        assert_eq!(classify_direction(&c, &cfg(), "q", "a").unwrap().label, Label::B);
        assert_eq!(c.calls.load(Ordering::SeqCst), 2);

        let c = Scripted::new(vec![Err(ChatError::Transport("x".into())); 3]);
        let err = classify_direction(&c, &cfg(), "q", "a").unwrap_err();
        assert!(matches!(err, LlmError::EndpointError { attempts: 3, .. }));

        let c = Scripted::new(vec![Err(ChatError::Rejected("401".into()))]);
        assert!(matches!(classify_direction(&c, &cfg(), "q", "a"), Err(LlmError::EndpointError { attempts: 1, .. })));

        let c = Scripted::new(vec![Ok("nonsense".into())]);
        assert_eq!(classify_direction(&c, &cfg(), "q", "a").unwrap().label, Label::Unparseable);
        assert_eq!(c.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn url_suffix() {
        let mut c = cfg();
        c.base_url = "http://h/v1/".into();
        assert_eq!(c.url(), "http://h/v1/chat/completions");
        c.base_url = "http://h/v1/chat/completions".into();
        assert_eq!(c.url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn config_validation() {
        assert!(EndpointConfig { timeout_secs: 0.0, ..cfg() }.validate().is_err());
        assert!(EndpointConfig { max_in_flight: 0, ..cfg() }.validate().is_err());
    }
}
