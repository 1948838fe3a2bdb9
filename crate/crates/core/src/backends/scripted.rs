//! Queue-driven backend doubles. Each call pops the next scripted reply; an
//! exhausted queue yields an empty (but valid) reply, except for the policy,
//! which repeats its last reply.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::{
    ClipHit, ClipRetriever, Instruction, PolicyModel, PolicyRequest, QueryExtractor,
    QueryUpdateRequest, RewardRequest, RewardResponse, RoundKind, SegmentRewardModel,
    SegmentScore,
};
use crate::anchors::normalize_query;
use crate::error::BackendError;
use crate::model::Timestamp;

type Reply<T> = Result<T, BackendError>;

#[derive(Default)]
pub struct ScriptedExtractor {
    discover: Mutex<VecDeque<Reply<Vec<String>>>>,
    update: Mutex<VecDeque<Reply<Vec<String>>>>,
    /// Frames passed to each `update` call.
    pub seen_frames: Mutex<Vec<Vec<Timestamp>>>,
}

fn owned(texts: &[&str]) -> Vec<String> {
    texts.iter().map(|s| s.to_string()).collect()
}

impl ScriptedExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn discover_ok(self, texts: &[&str]) -> Self {
        self.discover.lock().unwrap().push_back(Ok(owned(texts)));
        self
    }

    pub fn discover_err(self, e: BackendError) -> Self {
        self.discover.lock().unwrap().push_back(Err(e));
        self
    }

    pub fn update_ok(self, texts: &[&str]) -> Self {
        self.update.lock().unwrap().push_back(Ok(owned(texts)));
        self
    }

    pub fn update_err(self, e: BackendError) -> Self {
        self.update.lock().unwrap().push_back(Err(e));
        self
    }
}

impl QueryExtractor for ScriptedExtractor {
    fn discover(&self, _: &Instruction) -> Result<Vec<String>, BackendError> {
        self.discover.lock().unwrap().pop_front().unwrap_or(Ok(Vec::new()))
    }

    fn update(&self, request: &QueryUpdateRequest<'_>) -> Result<Vec<String>, BackendError> {
        self.seen_frames.lock().unwrap().push(request.frames.to_vec());
        self.update.lock().unwrap().pop_front().unwrap_or(Ok(Vec::new()))
    }
}

/// Fixed hit lists keyed by normalized query text; unknown queries return nothing.
#[derive(Default)]
pub struct ScriptedRetriever {
    hits: HashMap<String, Vec<ClipHit>>,
    failure: Option<BackendError>,
}

impl ScriptedRetriever {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(mut self, query: &str, hits: &[(f64, f64)]) -> Self {
        let hits = hits
            .iter()
            .map(|&(t, similarity)| ClipHit {
                peak_time: Timestamp::new(t).expect("valid scripted time"),
                similarity,
            })
            .collect();
        self.hits.insert(normalize_query(query), hits);
        self
    }

    pub fn fail_all(mut self, e: BackendError) -> Self {
        self.failure = Some(e);
        self
    }
}

impl ClipRetriever for ScriptedRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<ClipHit>, BackendError> {
        if let Some(e) = &self.failure {
            return Err(e.clone());
        }
        let mut hits = self.hits.get(&normalize_query(query)).cloned().unwrap_or_default();
        hits.truncate(top_k);
        Ok(hits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardCall {
    pub kind: RoundKind,
    pub segments: usize,
    pub history_len: usize,
    pub candidate_count: usize,
}

#[derive(Default)]
pub struct ScriptedReward {
    replies: Mutex<VecDeque<Reply<RewardResponse>>>,
    pub calls: Mutex<Vec<RewardCall>>,
}

impl ScriptedReward {
    pub fn new() -> Self {
        Self::default()
    }

    /// Full response: one `(score, explanation)` per segment.
    pub fn scores(self, scores: &[(i64, &str)]) -> Self {
        let resp = RewardResponse {
            scores: scores
                .iter()
                .map(|&(score, text)| {
                    Some(SegmentScore {
                        explanation: text.to_string(),
                        score,
                    })
                })
                .collect(),
        };
        self.reply(Ok(resp))
    }

    pub fn reply(self, reply: Reply<RewardResponse>) -> Self {
        self.replies.lock().unwrap().push_back(reply);
        self
    }
}

impl SegmentRewardModel for ScriptedReward {
    fn evaluate(&self, request: &RewardRequest<'_>) -> Result<RewardResponse, BackendError> {
        self.calls.lock().unwrap().push(RewardCall {
            kind: request.kind,
            segments: request.segments.len(),
            history_len: request.history.len(),
            candidate_count: request.candidate_count,
        });
        self.replies.lock().unwrap().pop_front().unwrap_or_else(|| {
            Ok(RewardResponse {
                scores: vec![None; request.segments.len()],
            })
        })
    }
}

#[derive(Default)]
pub struct ScriptedPolicy {
    replies: Mutex<VecDeque<Reply<String>>>,
    last: Mutex<Option<String>>,
    /// `(force_answer, notice present)` per call.
    pub calls: Mutex<Vec<(bool, bool)>>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn say(self, text: &str) -> Self {
        self.replies.lock().unwrap().push_back(Ok(text.to_string()));
        self
    }

    pub fn fail(self, e: BackendError) -> Self {
        self.replies.lock().unwrap().push_back(Err(e));
        self
    }
}

impl PolicyModel for ScriptedPolicy {
    fn decide(&self, request: &PolicyRequest<'_>) -> Result<String, BackendError> {
        self.calls
            .lock()
            .unwrap()
            .push((request.force_answer, request.notice.is_some()));
        let next = self.replies.lock().unwrap().pop_front();
        match next {
            Some(Ok(text)) => {
                *self.last.lock().unwrap() = Some(text.clone());
                Ok(text)
            }
            Some(Err(e)) => Err(e),
            None => self
                .last
                .lock()
                .unwrap()
                .clone()
                .ok_or_else(|| BackendError::Malformed("policy script exhausted".into())),
        }
    }
}
