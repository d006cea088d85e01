//! Drives a backend over images: cache lookup, retry, one re-ask on unusable
//! replies, and bounded-parallel fan-out.

mod pass;

pub use pass::{run_vdi_pass, CellAccumulator, ImageOutcome, QuestionOutcome, QuestionStatus, SceneTally, VdiPassResult};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use thiserror::Error;

use crate::backend::{BackendError, Reply, RetryPolicy, VlmBackend};
use crate::cache::{cache_key, now_secs, options_digest, CacheError, CachedResponse, Capability, ResponseCache, StoredReply};
use crate::catalog::{QuestionSpec, Scene, NOTA};
use crate::manifest::ImageRecord;
use crate::sevi::{RatingScale, LEVELS};

#[derive(Debug, Error)]
pub enum VqaError {
    #[error("no cached {capability} reply for image `{image_id}` (`{question}`)")]
    MissingCache {
        capability: &'static str,
        image_id: String,
        question: String,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("slice {0} has no usable images")]
    EmptySlice(String),
    #[error("catalog has no questions for entity `{0}`")]
    UncoveredEntity(String),
}

/// Result of asking about one image: a usable reply, or the reason the image
/// was given up on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step<T> {
    Done(T),
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrchestratorConfig {
    pub concurrency: usize,
    pub retry: RetryPolicy,
    /// Serve only from the cache; a miss is an error.
    pub cache_only: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            retry: RetryPolicy::default(),
            cache_only: false,
        }
    }
}

pub struct Orchestrator {
    backend: Arc<dyn VlmBackend>,
    backend_id: String,
    cache: Arc<ResponseCache>,
    config: OrchestratorConfig,
}

/// Canonical form of a selection: deduplicated, in offered order. Rejects
/// empty selections, unknown labels, NOTA alongside other options, and
/// multiple options on single-select questions.
pub fn validate_selection(q: &QuestionSpec, offered: &[String], raw: &[String]) -> Result<Vec<String>, String> {
    if raw.is_empty() {
        return Err("empty selection".into());
    }
    if let Some(unknown) = raw.iter().find(|r| !offered.contains(r)) {
        return Err(format!("`{unknown}` is not one of the offered options"));
    }
    let chosen: Vec<String> = offered.iter().filter(|o| raw.contains(o)).cloned().collect();
    if chosen.len() > 1 && chosen.iter().any(|c| c == NOTA) {
        return Err(format!("`{NOTA}` must be the only selection"));
    }
    if !q.multi_select && chosen.len() > 1 {
        return Err(format!("single-select question received {} options", chosen.len()));
    }
    Ok(chosen)
}

impl Orchestrator {
    pub fn new(backend: Arc<dyn VlmBackend>, cache: Arc<ResponseCache>, config: OrchestratorConfig) -> Self {
        let backend_id = backend.id();
        Self {
            backend,
            backend_id,
            cache,
            config,
        }
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Applies `f` to every item on up to `concurrency` workers. Results come
    /// back over a channel and are returned in input order.
    pub fn fan_out<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        let workers = self.config.concurrency.max(1).min(items.len());
        if workers <= 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        thread::scope(|s| {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, f) = (&next, &f);
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() || tx.send((i, f(&items[i]))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
            for (i, r) in rx {
                out[i] = Some(r);
            }
            out.into_iter().map(|r| r.expect("worker result missing")).collect()
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn ask<T: Clone>(
        &self,
        capability: Capability,
        image: &ImageRecord,
        question_id: &str,
        digest: &str,
        call: impl Fn(Option<&str>) -> Result<Reply<T>, BackendError>,
        check: impl Fn(T) -> Result<T, String>,
        store: impl Fn(T) -> StoredReply,
        load: impl Fn(&StoredReply) -> Option<T>,
    ) -> Result<Step<T>, VqaError> {
        let key = cache_key(&self.backend_id, capability, &image.image_id, question_id, digest);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(match (&hit.reply, load(&hit.reply)) {
                (_, Some(v)) => Step::Done(v),
                (StoredReply::Failed(why), None) => Step::Failed(why.clone()),
                (other, None) => Step::Failed(format!("cached reply of unexpected kind: {other:?}")),
            });
        }
        if self.config.cache_only {
            return Err(VqaError::MissingCache {
                capability: capability.as_str(),
                image_id: image.image_id.clone(),
                question: question_id.to_string(),
            });
        }
        let record = |reply: StoredReply, transcript: String| CachedResponse {
            cache_key: key.clone(),
            capability,
            image_id: image.image_id.clone(),
            question_id: question_id.to_string(),
            reply,
            transcript,
            timestamp: now_secs(),
        };

        let mut transcripts: Vec<String> = Vec::new();
        let mut complaint: Option<String> = None;
        for round in 0..2 {
            let outcome = self.config.retry.run(|| call(complaint.as_deref()));
            let problem = match outcome {
                Ok(reply) => {
                    transcripts.push(reply.transcript);
                    match check(reply.value) {
                        Ok(v) => {
                            self.cache.put(record(store(v.clone()), transcripts.join("\n--- re-ask ---\n")))?;
                            return Ok(Step::Done(v));
                        }
                        Err(why) => why,
                    }
                }
                Err(BackendError::Protocol(why)) => {
                    transcripts.push(why.clone());
                    why
                }
                Err(BackendError::Config(why)) => return Err(VqaError::Backend(BackendError::Config(why))),
                // exhausted retries: not cached, so a later run tries again
                Err(e) if e.is_transient() => return Ok(Step::Failed(e.to_string())),
                Err(e) => {
                    let why = e.to_string();
                    self.cache.put(record(StoredReply::Failed(why.clone()), transcripts.join("\n--- re-ask ---\n")))?;
                    return Ok(Step::Failed(why));
                }
            };
            if round == 1 {
                let why = format!("protocol violation after re-ask: {problem}");
                self.cache.put(record(StoredReply::Failed(why.clone()), transcripts.join("\n--- re-ask ---\n")))?;
                return Ok(Step::Failed(why));
            }
            complaint = Some(problem);
        }
        unreachable!("loop returns on its second round")
    }

    pub fn scene(&self, image: &ImageRecord) -> Result<Step<Scene>, VqaError> {
        self.ask(
            Capability::Scene,
            image,
            "scene",
            "",
            |_| self.backend.classify_scene(image),
            Ok,
            StoredReply::Scene,
            |r| match r {
                StoredReply::Scene(s) => Some(*s),
                _ => None,
            },
        )
    }

    /// Questions without a visibility companion pass without a backend call.
    pub fn visibility(&self, image: &ImageRecord, q: &QuestionSpec) -> Result<Step<bool>, VqaError> {
        let Some(text) = q.visibility_text.as_deref() else {
            return Ok(Step::Done(true));
        };
        self.ask(
            Capability::Visibility,
            image,
            &q.id,
            &options_digest(text, &[]),
            |_| self.backend.check_visibility(image, q),
            Ok,
            StoredReply::Visible,
            |r| match r {
                StoredReply::Visible(v) => Some(*v),
                _ => None,
            },
        )
    }

    pub fn answer(&self, image: &ImageRecord, q: &QuestionSpec) -> Result<Step<Vec<String>>, VqaError> {
        let offered = q.offered_options();
        self.ask(
            Capability::Answer,
            image,
            &q.id,
            &options_digest(&q.text, &offered),
            |reask| self.backend.answer_multiselect(image, q, &offered, reask),
            |raw| validate_selection(q, &offered, &raw),
            StoredReply::Selection,
            |r| match r {
                StoredReply::Selection(s) => Some(s.clone()),
                _ => None,
            },
        )
    }

    pub fn rating(&self, image: &ImageRecord, scale: &RatingScale) -> Result<Step<u8>, VqaError> {
        self.ask(
            Capability::Rating,
            image,
            scale.dimension.as_str(),
            &scale.digest(),
            |reask| self.backend.rate_scale(image, scale, reask),
            |r| {
                if (1..=LEVELS as u8).contains(&r) {
                    Ok(r)
                } else {
                    Err(format!("rating {r} is outside 1-5"))
                }
            },
            StoredReply::Rating,
            |r| match r {
                StoredReply::Rating(v) => Some(*v),
                _ => None,
            },
        )
    }

    /// The stored rating record, for transcript auditing.
    pub fn cached_rating(&self, image: &ImageRecord, scale: &RatingScale) -> Option<CachedResponse> {
        let key = cache_key(
            &self.backend_id,
            Capability::Rating,
            &image.image_id,
            scale.dimension.as_str(),
            &scale.digest(),
        );
        self.cache.get(&key)
    }
}
