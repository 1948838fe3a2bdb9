//! Semantic queries, clip retrieval, overlap clustering and anchor selection.
//!
//! Queries are distilled from the instruction, then grown from observed frames.
//! Each query retrieves clips; clips with identical spans are merged, the pool is
//! clustered by temporal overlap, and each cluster contributes its most similar
//! frame as an anchor.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backends::{ClipHit, ClipRetriever, Instruction, QueryExtractor, QueryUpdateRequest, RetryPolicy};
use crate::error::{Error, Result};
use crate::model::{SegmentInterval, Timestamp, VideoMeta};

/// Upper bound on queries accepted from a single extractor call.
pub const MAX_QUERIES_PER_CALL: usize = 5;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_CLIP_WIDTH: f64 = 8.0;

pub type QueryId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    Instruction,
    Observation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticQuery {
    pub id: QueryId,
    pub text: String,
    pub normalized_text: String,
    pub round_discovered: u32,
    pub origin: QueryOrigin,
}

/// Lowercase, trim, and collapse runs of whitespace.
pub fn normalize_query(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    queries: Vec<SemanticQuery>,
}

impl QuerySet {
    pub fn queries(&self) -> &[SemanticQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        let norm = normalize_query(text);
        self.queries.iter().any(|q| q.normalized_text == norm)
    }

    pub fn texts(&self) -> Vec<String> {
        self.queries.iter().map(|q| q.text.clone()).collect()
    }

    /// Adds `text` unless it is blank or already present. Returns the new id.
    pub fn insert(&mut self, text: &str, round: u32, origin: QueryOrigin) -> Option<QueryId> {
        let normalized_text = normalize_query(text);
        if normalized_text.is_empty() || self.contains(&normalized_text) {
            return None;
        }
        let id = self.queries.len();
        self.queries.push(SemanticQuery {
            id,
            text: text.trim().to_string(),
            normalized_text,
            round_discovered: round,
            origin,
        });
        Some(id)
    }

    pub fn get(&self, id: QueryId) -> Option<&SemanticQuery> {
        self.queries.get(id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedClip {
    pub source_queries: BTreeSet<QueryId>,
    pub peak_time: Timestamp,
    pub span: SegmentInterval,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub frame_time: Timestamp,
    pub similarity: f64,
    pub cluster_id: usize,
    pub source_queries: BTreeSet<QueryId>,
}

/// Anchors (sorted by time) together with the clip pool they were selected from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
    clips: Vec<RetrievedClip>,
}

impl AnchorSet {
    /// Deduplicate, cluster and select anchors from a clip pool.
    pub fn build(clips: Vec<RetrievedClip>) -> Self {
        let clips = dedup_clips(clips);
        let clusters = cluster_by_overlap(&clips);
        let anchors = select_anchors(&clips, &clusters);
        AnchorSet { anchors, clips }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn clips(&self) -> &[RetrievedClip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors_in<'a>(
        &'a self,
        interval: &'a SegmentInterval,
        video_end: Timestamp,
    ) -> impl Iterator<Item = &'a Anchor> + 'a {
        self.anchors
            .iter()
            .filter(move |a| interval.contains(a.frame_time, video_end))
    }
}

/// Merge clips with identical spans: max similarity, union of source queries.
pub fn dedup_clips(clips: Vec<RetrievedClip>) -> Vec<RetrievedClip> {
    let mut out: Vec<RetrievedClip> = Vec::with_capacity(clips.len());
    let mut by_span: HashMap<(u64, u64), usize> = HashMap::new();
    for clip in clips {
        let key = (
            clip.span.start.seconds().to_bits(),
            clip.span.end.seconds().to_bits(),
        );
        match by_span.get(&key) {
            Some(&idx) => {
                let kept = &mut out[idx];
                kept.source_queries.extend(clip.source_queries.iter().copied());
                let better = clip.similarity > kept.similarity
                    || (clip.similarity == kept.similarity && clip.peak_time < kept.peak_time);
                if better {
                    kept.similarity = clip.similarity;
                    kept.peak_time = clip.peak_time;
                }
            }
            None => {
                by_span.insert(key, out.len());
                out.push(clip);
            }
        }
    }
    out
}

/// Connected components of the closed-interval overlap graph, by sort and sweep.
/// Clusters come back ordered by start time, members in ascending index order.
pub fn cluster_by_overlap(clips: &[RetrievedClip]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.sort_by(|&a, &b| {
        clips[a]
            .span
            .start
            .cmp(&clips[b].span.start)
            .then(clips[a].span.end.cmp(&clips[b].span.end))
            .then(a.cmp(&b))
    });
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut reach: Option<Timestamp> = None;
    for idx in order {
        let span = clips[idx].span;
        match reach {
            Some(r) if span.start <= r => {
                clusters.last_mut().expect("open cluster").push(idx);
                reach = Some(r.max(span.end));
            }
            _ => {
                clusters.push(vec![idx]);
                reach = Some(span.end);
            }
        }
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters
}

/// One anchor per cluster: the peak of its most similar clip (ties: earliest peak).
pub fn select_anchors(clips: &[RetrievedClip], clusters: &[Vec<usize>]) -> Vec<Anchor> {
    let mut anchors: Vec<Anchor> = clusters
        .iter()
        .filter(|members| !members.is_empty())
        .enumerate()
        .map(|(cluster_id, members)| {
            let best = members
                .iter()
                .map(|&i| &clips[i])
                .min_by(|a, b| {
                    b.similarity
                        .total_cmp(&a.similarity)
                        .then(a.peak_time.cmp(&b.peak_time))
                })
                .expect("non-empty cluster");
            Anchor {
                frame_time: best.peak_time,
                similarity: best.similarity,
                cluster_id,
                source_queries: members
                    .iter()
                    .flat_map(|&i| clips[i].source_queries.iter().copied())
                    .collect(),
            }
        })
        .collect();
    anchors.sort_by(|a, b| a.frame_time.cmp(&b.frame_time));
    anchors
}

/// Fixed-width window centred on `peak`, clipped to the video and snapped to the grid.
pub fn clip_span(peak: Timestamp, width: f64, video: &VideoMeta) -> Result<SegmentInterval> {
    let half = width / 2.0;
    let end_of_video = video.duration().seconds();
    let start = video.snap_to_grid(Timestamp::new((peak.seconds() - half).max(0.0))?)?;
    let end = video.snap_to_grid(Timestamp::new((peak.seconds() + half).min(end_of_video))?)?;
    let (start, end) = (start.min(peak), end.max(peak));
    if start < end {
        return Ok(SegmentInterval { start, end });
    }
    // window narrower than the grid spacing: fall back to the neighbouring grid points
    let grid = video.frame_grid();
    let idx = grid.partition_point(|t| *t < peak);
    let lo = if idx > 0 { grid[idx - 1] } else { Timestamp::ZERO };
    let hi = grid.get(idx + 1).copied().unwrap_or(video.duration());
    let (lo, hi) = (lo.min(peak), hi.max(peak));
    if lo < hi {
        Ok(SegmentInterval { start: lo, end: hi })
    } else {
        Err(Error::rejected(format!("cannot form a clip span around {peak}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discovery {
    pub queries: QuerySet,
    pub retries: u32,
    /// No usable query came back: the episode runs without anchors.
    pub degraded: bool,
}

pub fn discover_initial_queries(
    instruction: &Instruction,
    extractor: &dyn QueryExtractor,
    retry: &RetryPolicy,
) -> Result<Discovery> {
    if instruction.question.trim().is_empty() {
        return Err(Error::rejected("instruction has no question"));
    }
    let (outcome, retries) = retry.run(|_| extractor.discover(instruction));
    let texts = outcome.map_err(|source| Error::Backend { retries, source })?;
    let mut queries = QuerySet::default();
    for text in texts {
        if queries.len() == MAX_QUERIES_PER_CALL {
            break;
        }
        queries.insert(&text, 0, QueryOrigin::Instruction);
    }
    let degraded = queries.is_empty();
    Ok(Discovery {
        queries,
        retries,
        degraded,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipRetrieval {
    pub clips: Vec<RetrievedClip>,
    pub retries: u32,
}

pub struct RetrievalParams<'a> {
    pub video: &'a VideoMeta,
    pub top_k: usize,
    pub clip_width: f64,
    pub retry: &'a RetryPolicy,
}

pub fn retrieve_clips(
    queries: &[SemanticQuery],
    retriever: &dyn ClipRetriever,
    params: &RetrievalParams<'_>,
) -> Result<ClipRetrieval> {
    if params.top_k == 0 {
        return Err(Error::rejected("top_k must be at least 1"));
    }
    let mut out = ClipRetrieval::default();
    for query in queries {
        let (outcome, retries) = params
            .retry
            .run(|_| retriever.retrieve(&query.text, params.top_k));
        out.retries += retries;
        let hits = outcome.map_err(|source| Error::Backend { retries, source })?;
        for hit in hits.into_iter().take(params.top_k) {
            out.clips.push(to_clip(query.id, hit, params)?);
        }
    }
    Ok(out)
}

fn to_clip(query: QueryId, hit: ClipHit, params: &RetrievalParams<'_>) -> Result<RetrievedClip> {
    if !(0.0..=1.0).contains(&hit.similarity) {
        return Err(Error::ContractViolation(format!(
            "retriever similarity {} outside [0, 1]",
            hit.similarity
        )));
    }
    if hit.peak_time > params.video.duration() {
        return Err(Error::ContractViolation(format!(
            "retriever peak {} beyond video end {}",
            hit.peak_time,
            params.video.duration()
        )));
    }
    let peak = params.video.snap_to_grid(hit.peak_time)?;
    Ok(RetrievedClip {
        source_queries: BTreeSet::from([query]),
        peak_time: peak,
        span: clip_span(peak, params.clip_width, params.video)?,
        similarity: hit.similarity,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryDelta {
    pub queries: Vec<String>,
    pub retries: u32,
    pub warning: Option<String>,
}

/// Ask the extractor for new queries grounded in this round's frames.
/// Extractor failure yields an empty delta and a warning.
pub fn update_queries(
    instruction: &Instruction,
    observed: &[Timestamp],
    history: &QuerySet,
    round: u32,
    extractor: &dyn QueryExtractor,
    retry: &RetryPolicy,
) -> QueryDelta {
    if observed.is_empty() {
        return QueryDelta::default();
    }
    let known = history.texts();
    let request = QueryUpdateRequest {
        instruction,
        frames: observed,
        history: &known,
        round,
    };
    let (outcome, retries) = retry.run(|_| extractor.update(&request));
    match outcome {
        Ok(texts) => {
            let mut seen = history.clone();
            let mut queries = Vec::new();
            for text in texts {
                if queries.len() == MAX_QUERIES_PER_CALL {
                    break;
                }
                if seen.insert(&text, round, QueryOrigin::Observation).is_some() {
                    queries.push(text.trim().to_string());
                }
            }
            QueryDelta {
                queries,
                retries,
                warning: None,
            }
        }
        Err(e) => QueryDelta {
            queries: Vec::new(),
            retries,
            warning: Some(format!("query update failed: {e}")),
        },
    }
}

/// Retrieve clips for the new queries only, merge them into the pool, and re-cluster.
/// Retrieval failure keeps the old anchor set and reports a warning.
pub fn refresh_anchor_set(
    old: &AnchorSet,
    delta: &[SemanticQuery],
    retriever: &dyn ClipRetriever,
    params: &RetrievalParams<'_>,
) -> (AnchorSet, u32, Option<String>) {
    if delta.is_empty() {
        return (old.clone(), 0, None);
    }
    match retrieve_clips(delta, retriever, params) {
        Ok(fresh) => {
            let mut pool = old.clips.clone();
            pool.extend(fresh.clips);
            (AnchorSet::build(pool), fresh.retries, None)
        }
        Err(e) => (
            old.clone(),
            0,
            Some(format!("anchor refresh failed, keeping previous anchors: {e}")),
        ),
    }
}
