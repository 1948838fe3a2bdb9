//! Seeded simulators driven by a [`SyntheticEpisode`]'s ground truth.
//!
//! Randomness is derived from `(seed, call identity)` only, so every call is a pure
//! function of its inputs and concurrent use needs no coordination.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use super::{
    Backends, ClipHit, ClipRetriever, Instruction, PolicyModel, PolicyRequest, QueryExtractor,
    QueryUpdateRequest, RetryPolicy, RewardRequest, RewardResponse, SegmentRewardModel,
    SegmentScore,
};
use crate::anchors::normalize_query;
use crate::error::BackendError;
use crate::model::Timestamp;
use crate::simenv::{hash_str, rng_for, SyntheticEpisode};

/// Similarity returned for every window of a query the episode does not know.
pub const UNKNOWN_QUERY_SIMILARITY: f64 = 0.05;
/// Spacing of candidate retrieval windows, in seconds.
pub const WINDOW_STEP: f64 = 4.0;

fn gaussian(seed: u64, parts: &[u64], sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let x: f64 = StandardNormal.sample(&mut rng_for(seed, parts));
    sigma * x
}

pub struct SimExtractor {
    pub episode: Arc<SyntheticEpisode>,
}

impl QueryExtractor for SimExtractor {
    fn discover(&self, _: &Instruction) -> Result<Vec<String>, BackendError> {
        Ok(self.episode.initial_queries.clone())
    }

    fn update(&self, req: &QueryUpdateRequest<'_>) -> Result<Vec<String>, BackendError> {
        let ep = &self.episode;
        Ok(ep
            .noise
            .extractor_script
            .iter()
            .filter(|r| {
                let c = ep.evidence_frames[r.trigger].seconds();
                req.frames.iter().any(|t| (t.seconds() - c).abs() <= r.radius)
            })
            .map(|r| r.query.clone())
            .collect())
    }
}

pub struct SimRetriever {
    pub episode: Arc<SyntheticEpisode>,
}

impl SimRetriever {
    /// Window centres: a regular lattice plus every relevance peak of the query.
    fn windows(&self, query: &str) -> Vec<Timestamp> {
        let ep = &self.episode;
        let mut out: Vec<Timestamp> = Vec::new();
        let end = ep.video.duration().seconds();
        let mut t = 0.0;
        while t <= end {
            out.push(ep.video.snap_to_grid(Timestamp::new(t).expect("non-negative")).expect("in range"));
            t += WINDOW_STEP;
        }
        out.extend(ep.relevance_table.iter().filter(|p| p.query == query).map(|p| p.center));
        out.sort();
        out.dedup();
        out
    }
}

impl ClipRetriever for SimRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<ClipHit>, BackendError> {
        let ep = &self.episode;
        let key = normalize_query(query);
        let sigma = ep.noise.similarity_noise_sigma;
        let qh = hash_str(&key);
        let mut hits: Vec<ClipHit> = self
            .windows(&key)
            .into_iter()
            .map(|t| {
                let similarity = match ep.relevance(&key, t.seconds()) {
                    None => UNKNOWN_QUERY_SIMILARITY,
                    Some(base) => {
                        let noise = gaussian(ep.noise.seed, &[qh, t.seconds().to_bits()], sigma);
                        (base + noise).clamp(0.0, 1.0)
                    }
                };
                ClipHit { peak_time: t, similarity }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.peak_time.cmp(&b.peak_time))
        });
        hits.truncate(top_k);
        Ok(hits)
    }
}

pub struct SimReward {
    pub episode: Arc<SyntheticEpisode>,
}

impl SimReward {
    /// `round(100 * clamp(fraction of evidence inside + noise))` and a trace sentence.
    pub fn score(&self, start: Timestamp, end: Timestamp) -> (i64, String) {
        let ep = &self.episode;
        let video_end = ep.video.duration();
        let seg = crate::model::SegmentInterval { start, end };
        let inside: Vec<usize> = ep
            .evidence_frames
            .iter()
            .enumerate()
            .filter(|(_, t)| seg.contains(**t, video_end))
            .map(|(i, _)| i + 1)
            .collect();
        let frac = inside.len() as f64 / ep.evidence_frames.len() as f64;
        let noise = gaussian(
            ep.noise.seed,
            &[hash_str("reward"), start.seconds().to_bits(), end.seconds().to_bits()],
            ep.noise.reward_noise_sigma,
        );
        let score = (100.0 * (frac + noise).clamp(0.0, 1.0)).round() as i64;
        let trace = if inside.is_empty() {
            "the boundary frames show nothing tied to the question".to_string()
        } else {
            let ids: Vec<String> = inside.iter().map(|i| format!("#{i}")).collect();
            format!("the boundary frames suggest evidence item {} lies here", ids.join(", "))
        };
        (score, trace)
    }
}

impl SegmentRewardModel for SimReward {
    fn evaluate(&self, req: &RewardRequest<'_>) -> Result<RewardResponse, BackendError> {
        Ok(RewardResponse {
            scores: req
                .segments
                .iter()
                .map(|s| {
                    let (score, explanation) = self.score(s.start, s.end);
                    Some(SegmentScore { explanation, score })
                })
                .collect(),
        })
    }
}

pub struct SimPolicy {
    pub episode: Arc<SyntheticEpisode>,
}

impl PolicyModel for SimPolicy {
    fn decide(&self, req: &PolicyRequest<'_>) -> Result<String, BackendError> {
        let ep = &self.episode;
        if ep.evidence_seen(req.memory) >= ep.answer_threshold {
            return Ok(ep.correct_option.clone());
        }
        let best = req.candidates.iter().min_by(|a, b| {
            b.fused
                .total_cmp(&a.fused)
                .then(a.interval.start.cmp(&b.interval.start))
                .then(a.node.cmp(&b.node))
        });
        match best {
            Some(c) => Ok(format!("{{Segment: {}}}", c.node)),
            None => Ok("{Segment: 0}".into()),
        }
    }
}

/// All four simulated roles for one episode, with the zero-delay retry policy.
pub fn sim_backends(episode: Arc<SyntheticEpisode>, retry: RetryPolicy) -> Backends {
    Backends {
        extractor: Arc::new(SimExtractor { episode: episode.clone() }),
        retriever: Arc::new(SimRetriever { episode: episode.clone() }),
        reward: Arc::new(SimReward { episode: episode.clone() }),
        policy: Arc::new(SimPolicy { episode }),
        retry,
    }
}
