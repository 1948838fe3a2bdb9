//! Model-facing interfaces and their implementations.
//!
//! | Interface | Simulated | Live |
//! |-----------|-----------|------|
//! | [`QueryExtractor`] | [`sim::SimExtractor`] | [`http::HttpQueryExtractor`] |
//! | [`ClipRetriever`] | [`sim::SimRetriever`] | [`http::EmbeddingRetriever`] |
//! | [`SegmentRewardModel`] | [`sim::SimReward`] | [`http::HttpRewardModel`] |
//! | [`PolicyModel`] | [`sim::SimPolicy`] | [`http::HttpPolicy`] |
//!
//! [`scripted`] holds queue-driven doubles for tests and fixtures.
//!
//! Backends make a single attempt per call. Retrying is the caller's job, through
//! [`RetryPolicy::run`], so that every retry shows up in the episode trace.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::model::{NodeId, RewardHistory, SegmentInterval, Timestamp, VideoMeta};

pub mod http;
pub mod parse;
pub mod prompts;
pub mod scripted;
pub mod sim;
pub mod store;

/// One labelled answer option of a multiple-choice question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub question: String,
    pub options: Vec<AnswerOption>,
}

impl Instruction {
    /// Options labelled `A`, `B`, ... in order.
    pub fn new(question: impl Into<String>, options: &[&str]) -> Self {
        Instruction {
            question: question.into(),
            options: options
                .iter()
                .enumerate()
                .map(|(i, text)| AnswerOption {
                    label: option_label(i),
                    text: (*text).to_string(),
                })
                .collect(),
        }
    }

    pub fn render_options(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.options.iter().any(|o| o.label == label)
    }
}

pub fn option_label(index: usize) -> String {
    char::from(b'A' + (index % 26) as u8).to_string()
}

/// A retrieval hit: the best-matching frame of a clip and its similarity in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipHit {
    pub peak_time: Timestamp,
    pub similarity: f64,
}

pub struct QueryUpdateRequest<'a> {
    pub instruction: &'a Instruction,
    pub frames: &'a [Timestamp],
    pub history: &'a [String],
    pub round: u32,
}

pub trait QueryExtractor: Send + Sync {
    /// Retrieval phrases distilled from the question and its options.
    fn discover(&self, instruction: &Instruction) -> Result<Vec<String>, BackendError>;

    /// New phrases grounded in freshly observed frames. May be empty.
    fn update(&self, request: &QueryUpdateRequest<'_>) -> Result<Vec<String>, BackendError>;
}

pub trait ClipRetriever: Send + Sync {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<ClipHit>, BackendError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    First,
    Following,
}

pub struct RewardRequest<'a> {
    pub kind: RoundKind,
    pub video: &'a VideoMeta,
    pub instruction: &'a Instruction,
    pub parent: NodeId,
    pub parent_interval: SegmentInterval,
    /// Child segments, in timeline order. Labelled `Segment 0..` in prompts.
    pub segments: &'a [SegmentInterval],
    pub frames: &'a [Timestamp],
    pub history: &'a RewardHistory,
    /// Size of the candidate set before this round's update.
    pub candidate_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub explanation: String,
    pub score: i64,
}

/// Per-segment scores in request order; `None` where the model skipped a segment.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RewardResponse {
    pub scores: Vec<Option<SegmentScore>>,
}

pub trait SegmentRewardModel: Send + Sync {
    fn evaluate(&self, request: &RewardRequest<'_>) -> Result<RewardResponse, BackendError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCandidate {
    pub node: NodeId,
    pub interval: SegmentInterval,
    pub fused: f64,
    pub explanation: String,
}

pub struct PolicyRequest<'a> {
    pub video: &'a VideoMeta,
    pub instruction: &'a Instruction,
    pub memory: &'a [Timestamp],
    pub candidates: &'a [PolicyCandidate],
    /// Exploration limits reached: the policy is told to answer now.
    pub force_answer: bool,
    /// Correction appended after an invalid or unparseable reply.
    pub notice: Option<String>,
}

pub trait PolicyModel: Send + Sync {
    /// Raw decision text; the engine interprets it.
    fn decide(&self, request: &PolicyRequest<'_>) -> Result<String, BackendError>;
}

/// Resolves sampled timestamps to pre-extracted frame images.
pub trait FrameStore: Send + Sync {
    fn frame_path(&self, t: Timestamp) -> Option<PathBuf>;
}

/// Retry budget with deterministic exponential backoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            base_delay: Duration::ZERO,
        }
    }
}

impl RetryPolicy {
    pub fn live(retries: u32) -> Self {
        RetryPolicy {
            retries,
            base_delay: Duration::from_millis(250),
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }

    /// Run `call` until it succeeds or the budget is spent. Returns the final outcome
    /// and the number of retries used. Configuration errors are never retried.
    pub fn run<T>(
        &self,
        mut call: impl FnMut(u32) -> Result<T, BackendError>,
    ) -> (Result<T, BackendError>, u32) {
        let mut attempt = 0;
        loop {
            match call(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e @ BackendError::Config(_)) => return (Err(e), attempt),
                Err(e) if attempt >= self.retries => return (Err(e), attempt),
                Err(_) => {
                    let pause = self.delay(attempt);
                    if !pause.is_zero() {
                        std::thread::sleep(pause);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

/// The four model roles one episode talks to.
#[derive(Clone)]
pub struct Backends {
    pub extractor: Arc<dyn QueryExtractor>,
    pub retriever: Arc<dyn ClipRetriever>,
    pub reward: Arc<dyn SegmentRewardModel>,
    pub policy: Arc<dyn PolicyModel>,
    pub retry: RetryPolicy,
}
