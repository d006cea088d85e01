//! Vision-language model backends.
//!
//! A backend exposes four capabilities (scene classification, visibility
//! check, multi-select answering, 1-5 rating). Replies carry the raw
//! transcript alongside the structured value. Validation of replies against
//! the offered options happens in the orchestrator, not here.

mod config;
mod mock;
pub mod parse;
mod remote;

pub use config::{build_backend, load_backend_config, BackendConfig, MockConfig, RemoteConfig};
pub use mock::{MockBackend, PlantedImage, PlantedTable, SamplerConfig, SceneBias};
pub use remote::RemoteBackend;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{QuestionSpec, Scene};
use crate::manifest::ImageRecord;
use crate::sevi::RatingScale;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply<T> {
    pub value: T,
    pub transcript: String,
}

impl<T> Reply<T> {
    pub fn new(value: T, transcript: impl Into<String>) -> Self {
        Self {
            value,
            transcript: transcript.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("image `{image_id}` could not be loaded: {reason}")]
    Unreachable { image_id: String, reason: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unusable reply: {0}")]
    Protocol(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    /// Worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait VlmBackend: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> String;

    fn classify_scene(&self, image: &ImageRecord) -> Result<Reply<Scene>, BackendError>;

    fn check_visibility(&self, image: &ImageRecord, question: &QuestionSpec) -> Result<Reply<bool>, BackendError>;

    /// `options` already include NOTA. `reask` carries the complaint about a
    /// previous unusable reply, if any.
    fn answer_multiselect(
        &self,
        image: &ImageRecord,
        question: &QuestionSpec,
        options: &[String],
        reask: Option<&str>,
    ) -> Result<Reply<Vec<String>>, BackendError>;

    fn rate_scale(&self, image: &ImageRecord, scale: &RatingScale, reask: Option<&str>) -> Result<Reply<u8>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    #[serde(default = "RetryPolicy::default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "RetryPolicy::default_base_delay_ms")]
    pub base_delay_ms: u64,
    #[serde(default = "RetryPolicy::default_max_delay_ms")]
    pub max_delay_ms: u64,
}

impl RetryPolicy {
    fn default_max_retries() -> u32 {
        3
    }

    fn default_base_delay_ms() -> u64 {
        500
    }

    fn default_max_delay_ms() -> u64 {
        8_000
    }

    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    /// Runs `call`, retrying transient errors with exponential backoff.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: Self::default_max_retries(),
            base_delay_ms: Self::default_base_delay_ms(),
            max_delay_ms: Self::default_max_delay_ms(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transient_classification() {
        assert!(BackendError::Transport("reset".into()).is_transient());
        assert!(BackendError::Http { status: 429, body: String::new() }.is_transient());
        assert!(BackendError::Http { status: 503, body: String::new() }.is_transient());
        assert!(!BackendError::Http { status: 400, body: String::new() }.is_transient());
        assert!(!BackendError::Protocol("x".into()).is_transient());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
        assert_eq!(p.delay(10), Duration::from_millis(8000));
        assert_eq!(p.delay(200), Duration::from_millis(8000));
    }

    #[test]
    fn retries_transient_up_to_limit() {
        let mut calls = 0;
        let out: Result<(), _> = RetryPolicy::immediate(3).run(|| {
            calls += 1;
            Err(BackendError::Transport("down".into()))
        });
        assert!(out.is_err());
        assert_eq!(calls, 4);

        let mut calls = 0;
        let out = RetryPolicy::immediate(3).run(|| {
            calls += 1;
            if calls < 3 {
                Err(BackendError::Http { status: 500, body: String::new() })
            } else {
                Ok(calls)
            }
        });
        assert_eq!(out, Ok(3));
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let mut calls = 0;
        let _: Result<(), _> = RetryPolicy::immediate(3).run(|| {
            calls += 1;
            Err(BackendError::Unreachable {
                image_id: "a".into(),
                reason: "gone".into(),
            })
        });
        assert_eq!(calls, 1);
    }
}
