//! Text-completion providers.
//!
//! Every provider implements [`Backend`]. Three ship with the crate:
//! [`HttpBackend`] for chat-completions servers, [`ReplayBackend`] for
//! recorded prompt/response pairs, and [`SyntheticBackend`], a seeded noisy
//! reasoner whose error and correction statistics are known in advance.

mod http;
mod replay;
mod synthetic;

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

pub use http::{HttpBackend, HttpConfig, API_BASE_ENV, API_KEY_ENV};
pub use replay::{prompt_sha256, RecordOutcome, RecordingBackend, ReplayBackend, ReplayEntry};
pub use synthetic::{
    synthetic_generate, synthetic_review, SyntheticBackend, SyntheticConfig, ERROR_MARKER,
};

use crate::chain::ChainOfThought;
use crate::prompt::PromptText;

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub prompt: PromptText,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
    /// Per-request seed for seedable providers.
    pub seed: Option<u64>,
}

impl BackendRequest {
    pub fn new(prompt: PromptText) -> Self {
        BackendRequest {
            prompt,
            temperature: 0.0,
            max_output_tokens: 1024,
            timeout: Duration::from_secs(60),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout.is_zero() {
            return Err(BackendError::InvalidRequest("timeout must be > 0".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be ≥ 0".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub latency: Duration,
    pub provider_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider unavailable (HTTP {status}): {body}")]
    Unavailable { status: u16, body: String },
    #[error("provider refused the request (HTTP {status}): {body}")]
    Refusal { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    Protocol(String),
    #[error("no recording for prompt {prompt_sha256}")]
    MissingRecording { prompt_sha256: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed synthetic input: {0}")]
    MalformedInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl BackendError {
    /// Timeouts, transport failures and 429/5xx responses may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout(_)
                | BackendError::Transport(_)
                | BackendError::Unavailable { .. }
        )
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;

    /// Identifies the provider in responses and trace snapshots.
    fn tag(&self) -> &str;

    /// Upper bound on concurrent `complete` calls this provider accepts.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }

    /// Attaches provider-known ground truth to a parsed chain. Most providers
    /// know nothing and leave the chain untouched.
    fn annotate(&self, _chain: &mut ChainOfThought) {}
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
    fn tag(&self) -> &str {
        (**self).tag()
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
    fn annotate(&self, chain: &mut ChainOfThought) {
        (**self).annotate(chain)
    }
}

/// Exponential backoff; never retries a refusal or any non-retryable error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }

    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    log::debug!("retrying after {e} (attempt {})", attempt + 1);
                    thread::sleep(self.delay_for(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        InFlightGate {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|p| p.into_inner());
        }
        *active += 1;
        InFlightPermit { gate: self }
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap_or_else(|p| p.into_inner());
        *active -= 1;
        self.gate.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn retries_only_retryable_errors() {
        let policy = RetryPolicy {
            max_retries: 2,
            base_delay: Duration::ZERO,
        };
        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(BackendError::Transport("down".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls, 3);

        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(BackendError::Refusal {
                status: 400,
                body: String::new(),
            })
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);

        let mut calls = 0;
        let r = policy.run(|| {
            calls += 1;
            if calls < 2 {
                Err(BackendError::Timeout(Duration::from_secs(1)))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r, Ok(7));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(10),
        };
        assert_eq!(p.delay_for(0), Duration::from_millis(10));
        assert_eq!(p.delay_for(2), Duration::from_millis(40));
    }

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(InFlightGate::new(3));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..12)
            .map(|_| {
                let (gate, active, peak) = (gate.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let _permit = gate.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn request_validation() {
        let mut r = BackendRequest::new(PromptText {
            text: "x".into(),
            phase: crate::prompt::PromptPhase::Initial,
        });
        assert!(r.validate().is_ok());
        r.timeout = Duration::ZERO;
        assert!(r.validate().is_err());
    }
}
