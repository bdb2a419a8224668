//! Minimal chat-completions client.
//!
//! `POST {base_url}/v1/chat/completions` with a single user message; only
//! `choices[0].message.content` of the reply is read.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse, InFlightGate, RetryPolicy};

pub const API_KEY_ENV: &str = "MCOT_API_KEY";
pub const API_BASE_ENV: &str = "MCOT_API_BASE";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the base URL and bearer token from the environment.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let base = std::env::var(API_BASE_ENV)
            .map_err(|_| BackendError::Config(format!("{API_BASE_ENV} is not set")))?;
        let mut cfg = HttpConfig::new(base, model);
        cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let gate = InFlightGate::new(config.max_in_flight);
        Ok(HttpBackend {
            config,
            client,
            gate,
        })
    }

    fn attempt(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt.text,
            }],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let mut builder = self
            .client
            .post(self.config.endpoint())
            .timeout(request.timeout)
            .json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(request.timeout)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(request.timeout)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Unavailable {
                status: status.as_u16(),
                body: text,
            });
        }
        if !status.is_success() {
            return Err(BackendError::Refusal {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let start = Instant::now();
        let text = self.config.retry.run(|| self.attempt(request))?;
        Ok(BackendResponse {
            text,
            latency: start.elapsed(),
            provider_tag: self.tag().to_string(),
        })
    }

    fn tag(&self) -> &str {
        "http"
    }

    fn max_in_flight(&self) -> usize {
        self.gate.limit()
    }
}
