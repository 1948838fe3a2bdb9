//! The exploration/exploitation round loop.
//!
//! One round: expand the selected leaf, score its children, replace it in the
//! candidate set, fuse scores over the whole set, update memory, queries and anchors,
//! then ask the policy to answer or pick the next leaf.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::anchors::{
    discover_initial_queries, refresh_anchor_set, retrieve_clips, update_queries, AnchorSet,
    QueryOrigin, QuerySet, RetrievalParams, DEFAULT_CLIP_WIDTH, DEFAULT_TOP_K,
};
use crate::backends::parse::{last_named_option, parse_decision, Decision};
use crate::backends::{
    Backends, Instruction, PolicyCandidate, PolicyRequest, RetryPolicy, RewardRequest, RoundKind,
};
use crate::error::{BackendError, Error, Result};
use crate::expansion::{ExpansionBudget, ExpansionStrategy, SemanticGuided};
use crate::model::{
    MemoryBuffer, MemoryEntry, NodeId, RewardHistory, RewardRecord, SegmentInterval,
    SegmentTree, Timestamp, VideoMeta,
};
use crate::scoring::{
    normalize_intrinsic, query_score, Candidate, FusionStrategy, UncertaintyAware, RUBRIC_SCALE,
};
use crate::trace::{
    ActionRecord, AnchorRecord, CandidateRecord, ChildRecord, EpisodeTrace, FrameRecord,
    FrameSource, MemoryRecord, RoundRecord, Span, Terminal, Termination, TraceHeader,
    TRACE_SCHEMA, TRACE_VERSION,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub budget: ExpansionBudget,
    pub tau_c: f64,
    pub memory_capacity: usize,
    pub retrieval_top_k: usize,
    /// Width of a retrieved clip around its peak, in seconds.
    pub clip_width: f64,
    pub max_rounds: u32,
    pub max_total_frames: usize,
    /// Scale on which reward entropy is measured; see [`crate::scoring::fuse`].
    pub entropy_scale: f64,
    pub seed: u64,
    /// When false, queries and anchors stay as discovered before round 1.
    pub query_update: bool,
    /// Record wall-clock time per round. Off by default: it makes traces
    /// non-reproducible.
    pub timing: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            budget: ExpansionBudget {
                total_frames: 6,
                anchor_frames: 3,
            },
            tau_c: 0.1,
            memory_capacity: 16,
            retrieval_top_k: DEFAULT_TOP_K,
            clip_width: DEFAULT_CLIP_WIDTH,
            max_rounds: 10,
            max_total_frames: 60,
            entropy_scale: RUBRIC_SCALE,
            seed: 0,
            query_update: true,
            timing: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        ExpansionBudget::new(self.budget.total_frames, self.budget.anchor_frames)?;
        let positive = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive")))
            }
        };
        positive(self.tau_c > 0.0 && self.tau_c.is_finite(), "tau_c")?;
        positive(self.memory_capacity > 0, "memory_capacity")?;
        positive(self.retrieval_top_k > 0, "retrieval_top_k")?;
        positive(self.clip_width > 0.0 && self.clip_width.is_finite(), "clip_width")?;
        positive(self.max_rounds > 0, "max_rounds")?;
        positive(self.max_total_frames > 0, "max_total_frames")?;
        positive(
            self.entropy_scale > 0.0 && self.entropy_scale.is_finite(),
            "entropy_scale",
        )
    }
}

/// The interchangeable parts of the search.
#[derive(Clone)]
pub struct Strategies {
    pub expansion: Arc<dyn ExpansionStrategy>,
    pub fusion: Arc<dyn FusionStrategy>,
}

impl Default for Strategies {
    fn default() -> Self {
        Strategies {
            expansion: Arc::new(SemanticGuided),
            fusion: Arc::new(UncertaintyAware),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub answer: String,
    pub rounds_used: u32,
    pub frames_observed: usize,
    pub termination: Termination,
    pub trace: EpisodeTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChildScore {
    pub raw_score: i64,
    pub intrinsic: f64,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<ChildScore>,
    pub retries: u32,
    pub warnings: Vec<String>,
}

/// Score the children of one expansion. Segments the model leaves out are asked for
/// once more, then default to a reward of 0. Malformed replies that survive the retry
/// budget also default; transport failures do not.
pub fn evaluate_children(
    request: &RewardRequest<'_>,
    backends: &Backends,
) -> Result<Evaluation> {
    if request.segments.is_empty() {
        return Err(Error::rejected("no children to evaluate"));
    }
    let n = request.segments.len();
    let mut warnings = Vec::new();
    let (outcome, mut retries) = backends.retry.run(|_| backends.reward.evaluate(request));
    let mut unusable = false;
    let mut scores = match outcome {
        Ok(resp) => resp.scores,
        Err(BackendError::Malformed(msg)) => {
            warnings.push(format!("reward reply unusable after {retries} retries: {msg}"));
            unusable = true;
            vec![None; n]
        }
        Err(source) => return Err(Error::Backend { retries, source }),
    };
    if scores.len() != n {
        warnings.push(format!(
            "reward reply has {} entries for {n} segments",
            scores.len()
        ));
        scores.resize(n, None);
    }
    if !unusable && scores.iter().any(Option::is_none) {
        retries += 1;
        match backends.reward.evaluate(request) {
            Ok(again) => {
                for (slot, fresh) in scores.iter_mut().zip(again.scores) {
                    if slot.is_none() {
                        *slot = fresh;
                    }
                }
            }
            Err(BackendError::Malformed(msg)) => {
                warnings.push(format!("reward re-ask unusable: {msg}"));
            }
            Err(source) => return Err(Error::Backend { retries, source }),
        }
    }
    let scores = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| match s {
            Some(s) => {
                let norm = normalize_intrinsic(s.score);
                if let Some(w) = norm.warning {
                    warnings.push(format!("segment {i}: {w}"));
                }
                ChildScore {
                    raw_score: s.score.clamp(0, 100),
                    intrinsic: norm.value,
                    explanation: s.explanation,
                }
            }
            None => {
                warnings.push(format!("segment {i} missing from reward reply; r set to 0"));
                ChildScore {
                    raw_score: 0,
                    intrinsic: 0.0,
                    explanation: String::new(),
                }
            }
        })
        .collect();
    Ok(Evaluation {
        scores,
        retries,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub action: ActionRecord,
    pub retries: u32,
    pub warnings: Vec<String>,
    /// Every raw policy reply, in order.
    pub replies: Vec<String>,
}

/// The fallback exploration target: highest fused score, then earliest start, then
/// smallest node id.
pub fn argmax_candidate(candidates: &[PolicyCandidate]) -> Option<NodeId> {
    candidates
        .iter()
        .min_by(|a, b| {
            b.fused
                .total_cmp(&a.fused)
                .then(a.interval.start.cmp(&b.interval.start))
                .then(a.node.cmp(&b.node))
        })
        .map(|c| c.node)
}

/// Ask the policy for the next action and interpret its reply.
///
/// `earlier_texts` are prior policy and reward traces, oldest first; a forced answer
/// falls back to the option most recently named in them.
pub fn select_action(
    base: &PolicyRequest<'_>,
    policy: &dyn crate::backends::PolicyModel,
    retry: &RetryPolicy,
    earlier_texts: &[String],
) -> Result<Selection> {
    let instruction = base.instruction;
    let mut retries = 0;
    let mut warnings = Vec::new();
    let mut replies: Vec<String> = Vec::new();
    let mut notice: Option<String> = None;
    for attempt in 0..2 {
        let request = PolicyRequest {
            notice: notice.clone(),
            ..*base
        };
        let (outcome, r) = retry.run(|_| policy.decide(&request));
        retries += r;
        let reply = outcome.map_err(|source| Error::Backend { retries, source })?;
        replies.push(reply.clone());
        let problem = match parse_decision(&reply) {
            Decision::Answer(label) if instruction.has_label(&label) => {
                return Ok(Selection {
                    action: ActionRecord::Answer {
                        label,
                        rationale: reply,
                        forced: base.force_answer,
                    },
                    retries,
                    warnings,
                    replies,
                });
            }
            Decision::Explore(_) if base.force_answer => break,
            Decision::Explore(id) if base.candidates.iter().any(|c| c.node == id) => {
                return Ok(Selection {
                    action: ActionRecord::Explore {
                        node: id,
                        fallback: false,
                    },
                    retries,
                    warnings,
                    replies,
                });
            }
            Decision::Explore(id) => format!("segment {id} is not a current candidate"),
            Decision::Answer(label) => format!("option {label} does not exist"),
            Decision::Unparseable => "reply names neither a segment nor an option".to_string(),
        };
        warnings.push(format!("policy reply {}: {problem}", attempt + 1));
        if attempt == 0 {
            retries += 1;
            notice = Some(format!(
                "Your previous reply could not be used ({problem}). Reply with {{Segment: id}} for one of the listed segments, or with one option letter."
            ));
        }
    }
    let action = if base.force_answer {
        let named = replies
            .iter()
            .rev()
            .chain(earlier_texts.iter().rev())
            .find_map(|t| last_named_option(t).filter(|l| instruction.has_label(l)));
        let (label, rationale) = match named {
            Some(l) => (l, "policy kept exploring; took the most recently named option".to_string()),
            None => (
                instruction
                    .options
                    .first()
                    .map(|o| o.label.clone())
                    .unwrap_or_else(|| "A".into()),
                "policy kept exploring and no option was ever named; took the first option"
                    .to_string(),
            ),
        };
        warnings.push(format!("forced answer fell back to {label}"));
        ActionRecord::Answer {
            label,
            rationale,
            forced: true,
        }
    } else {
        let node = argmax_candidate(base.candidates)
            .ok_or_else(|| Error::rejected("no candidates to explore"))?;
        warnings.push(format!("falling back to highest fused candidate {node}"));
        ActionRecord::Explore {
            node,
            fallback: true,
        }
    };
    Ok(Selection {
        action,
        retries,
        warnings,
        replies,
    })
}

fn anchor_records(set: &AnchorSet) -> Vec<AnchorRecord> {
    set.anchors()
        .iter()
        .map(|a| AnchorRecord {
            time: a.frame_time.seconds(),
            similarity: a.similarity,
        })
        .collect()
}

fn minus(a: &[AnchorRecord], b: &[AnchorRecord]) -> Vec<AnchorRecord> {
    a.iter().filter(|x| !b.contains(x)).copied().collect()
}

/// Run one episode with the default strategies.
pub fn run_episode(
    video: &VideoMeta,
    instruction: &Instruction,
    backends: &Backends,
    config: &EpisodeConfig,
) -> Result<EpisodeResult> {
    run_episode_with(video, instruction, backends, config, &Strategies::default())
}

pub fn run_episode_with(
    video: &VideoMeta,
    instruction: &Instruction,
    backends: &Backends,
    config: &EpisodeConfig,
    strategies: &Strategies,
) -> Result<EpisodeResult> {
    config.validate()?;
    if instruction.options.is_empty() {
        return Err(Error::rejected("instruction has no answer options"));
    }
    let mut episode = Episode::init(video, instruction, backends, config, strategies)?;
    loop {
        match episode.round() {
            Ok(Some(result)) => return Ok(result),
            Ok(None) => {}
            Err(source) => {
                return Err(Error::Episode {
                    round: episode.round_no,
                    partial: Box::new(episode.trace),
                    source: Box::new(source),
                })
            }
        }
    }
}

struct Episode<'a> {
    video: &'a VideoMeta,
    instruction: &'a Instruction,
    backends: &'a Backends,
    config: &'a EpisodeConfig,
    strategies: &'a Strategies,
    tree: SegmentTree,
    candidates: Vec<NodeId>,
    selected: NodeId,
    queries: QuerySet,
    anchors: AnchorSet,
    memory: MemoryBuffer,
    history: RewardHistory,
    observed: BTreeSet<Timestamp>,
    texts: Vec<String>,
    round_no: u32,
    trace: EpisodeTrace,
}

impl<'a> Episode<'a> {
    fn init(
        video: &'a VideoMeta,
        instruction: &'a Instruction,
        backends: &'a Backends,
        config: &'a EpisodeConfig,
        strategies: &'a Strategies,
    ) -> Result<Self> {
        let tree = SegmentTree::new(video);
        if tree.node(tree.root()).atomic {
            let root = video.full_interval();
            return Err(Error::Unexpandable {
                start: root.start.seconds(),
                end: root.end.seconds(),
            });
        }
        let discovery =
            discover_initial_queries(instruction, backends.extractor.as_ref(), &backends.retry)?;
        let retrieval = retrieve_clips(
            discovery.queries.queries(),
            backends.retriever.as_ref(),
            &RetrievalParams {
                video,
                top_k: config.retrieval_top_k,
                clip_width: config.clip_width,
                retry: &backends.retry,
            },
        )?;
        let anchors = AnchorSet::build(retrieval.clips);
        let mut warnings = Vec::new();
        if discovery.degraded {
            warnings.push("query discovery returned nothing; running without anchors".into());
        }
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            version: TRACE_VERSION,
            video_id: video.video_id.clone(),
            seed: config.seed,
            duration: video.duration().seconds(),
            question: instruction.question.clone(),
            options: instruction.options.clone(),
            queries: discovery.queries.texts(),
            anchors: anchor_records(&anchors),
            degraded: discovery.degraded,
            retries: discovery.retries + retrieval.retries,
            warnings,
        };
        Ok(Episode {
            video,
            instruction,
            backends,
            config,
            strategies,
            candidates: vec![tree.root()],
            selected: tree.root(),
            tree,
            queries: discovery.queries,
            anchors,
            memory: MemoryBuffer::new(config.memory_capacity)?,
            history: RewardHistory::default(),
            observed: BTreeSet::new(),
            texts: Vec::new(),
            round_no: 0,
            trace: EpisodeTrace {
                header,
                rounds: Vec::new(),
            },
        })
    }

    fn retrieval_params(&self) -> RetrievalParams<'_> {
        RetrievalParams {
            video: self.video,
            top_k: self.config.retrieval_top_k,
            clip_width: self.config.clip_width,
            retry: &self.backends.retry,
        }
    }

    /// Play one round. Returns the result once the episode has ended.
    fn round(&mut self) -> Result<Option<EpisodeResult>> {
        self.round_no += 1;
        let round = self.round_no;
        let started = self.config.timing.then(Instant::now);
        let video_end = self.video.duration();
        let mut retries = 0;
        let mut warnings = Vec::new();

        // expansion
        let parent = self.selected;
        let parent_interval = self.tree.node(parent).interval;
        let expansion = self.strategies.expansion.expand(
            &parent_interval,
            &self.anchors,
            self.config.budget,
            self.video,
        )?;
        let child_ids = self
            .tree
            .add_children(parent, &expansion.children, round, self.video)?;
        self.observed.extend(expansion.frames.iter().copied());

        // evaluation
        let request = RewardRequest {
            kind: if round == 1 {
                RoundKind::First
            } else {
                RoundKind::Following
            },
            video: self.video,
            instruction: self.instruction,
            parent,
            parent_interval,
            segments: &expansion.children,
            frames: &expansion.frames,
            history: &self.history,
            candidate_count: self.candidates.len(),
        };
        let evaluation = evaluate_children(&request, self.backends)?;
        retries += evaluation.retries;
        warnings.extend(evaluation.warnings);

        let mut children = Vec::with_capacity(child_ids.len());
        for (&id, score) in child_ids.iter().zip(&evaluation.scores) {
            let interval = self.tree.node(id).interval;
            let u = query_score(&interval, &self.anchors, self.config.tau_c, video_end)?;
            let node = self.tree.node_mut(id);
            node.intrinsic_reward = Some(score.intrinsic);
            node.query_score = Some(u);
            node.trace = Some(score.explanation.clone());
            children.push(ChildRecord {
                node: id,
                start: interval.start.seconds(),
                end: interval.end.seconds(),
                atomic: node.atomic,
                raw_score: score.raw_score,
                explanation: score.explanation.clone(),
            });
            self.texts.push(score.explanation.clone());
        }

        // candidate update and fusion over the whole set
        self.candidates.retain(|&c| c != parent);
        self.candidates
            .extend(child_ids.iter().copied().filter(|&c| !self.tree.node(c).atomic));
        self.candidates
            .sort_by(|&a, &b| {
                let (x, y) = (self.tree.node(a), self.tree.node(b));
                x.interval.start.cmp(&y.interval.start).then(a.cmp(&b))
            });
        let (candidate_records, entropy) = self.fuse()?;

        for (&id, score) in child_ids.iter().zip(&evaluation.scores) {
            self.history.push(RewardRecord {
                round,
                node: id,
                interval: self.tree.node(id).interval,
                trace: score.explanation.clone(),
                raw_score: score.raw_score,
                intrinsic_reward: score.intrinsic,
            })?;
        }

        // memory: a frame is credited with the better of the two children it bounds
        let added: Vec<MemoryEntry> = expansion
            .frames
            .iter()
            .enumerate()
            .map(|(k, &t)| MemoryEntry {
                frame_time: t,
                associated_reward: evaluation.scores[k]
                    .intrinsic
                    .max(evaluation.scores[k + 1].intrinsic),
                round_observed: round,
            })
            .collect();
        let evicted = self.memory.update(&added)?;
        let memory = MemoryRecord {
            capacity: self.memory.capacity(),
            added,
            evicted,
            entries: self.memory.entries().to_vec(),
        };

        // queries and anchors
        let mut queries_added = Vec::new();
        let (mut anchors_added, mut anchors_removed) = (Vec::new(), Vec::new());
        if self.config.query_update {
            let delta = update_queries(
                self.instruction,
                &expansion.frames,
                &self.queries,
                round,
                self.backends.extractor.as_ref(),
                &self.backends.retry,
            );
            retries += delta.retries;
            warnings.extend(delta.warning);
            let ids: Vec<_> = delta
                .queries
                .iter()
                .filter_map(|q| self.queries.insert(q, round, QueryOrigin::Observation))
                .collect();
            let fresh: Vec<_> = ids
                .into_iter()
                .filter_map(|id| self.queries.get(id).cloned())
                .collect();
            queries_added = fresh.iter().map(|q| q.text.clone()).collect();
            let before = anchor_records(&self.anchors);
            let (refreshed, r, warning) = refresh_anchor_set(
                &self.anchors,
                &fresh,
                self.backends.retriever.as_ref(),
                &self.retrieval_params(),
            );
            retries += r;
            warnings.extend(warning);
            self.anchors = refreshed;
            let after = anchor_records(&self.anchors);
            anchors_added = minus(&after, &before);
            anchors_removed = minus(&before, &after);
        }

        // selection
        let frames_observed = self.observed.len();
        let limit = if self.candidates.is_empty() || frames_observed >= self.config.max_total_frames
        {
            Some(Termination::ForcedByFrameBudget)
        } else if round >= self.config.max_rounds {
            Some(Termination::ForcedByRoundLimit)
        } else {
            None
        };
        let policy_candidates: Vec<PolicyCandidate> = self
            .candidates
            .iter()
            .map(|&id| {
                let n = self.tree.node(id);
                PolicyCandidate {
                    node: id,
                    interval: n.interval,
                    fused: n.fused_score.unwrap_or(0.0),
                    explanation: n.trace.clone().unwrap_or_default(),
                }
            })
            .collect();
        let memory_frames = self.memory.frame_times();
        let base = PolicyRequest {
            video: self.video,
            instruction: self.instruction,
            memory: &memory_frames,
            candidates: &policy_candidates,
            force_answer: limit.is_some(),
            notice: None,
        };
        let selection = select_action(
            &base,
            self.backends.policy.as_ref(),
            &self.backends.retry,
            &self.texts,
        )?;
        retries += selection.retries;
        warnings.extend(selection.warnings);
        self.texts.extend(selection.replies);

        let terminal = match &selection.action {
            ActionRecord::Answer { label, .. } => Some(Terminal {
                answer: label.clone(),
                termination: limit.unwrap_or(Termination::PolicyAnswered),
                rounds_used: round,
                frames_observed,
            }),
            ActionRecord::Explore { node, .. } => {
                self.selected = *node;
                None
            }
        };
        let frames = expansion
            .frames
            .iter()
            .map(|&t| FrameRecord {
                time: t.seconds(),
                source: if expansion.is_anchor(t) {
                    FrameSource::Anchor
                } else {
                    FrameSource::Coverage
                },
            })
            .collect();
        self.trace.rounds.push(RoundRecord {
            round,
            selected: span(parent, &parent_interval),
            frames,
            radius: expansion.achieved_radius,
            children,
            candidates: candidate_records,
            entropy,
            weights: [1.0 - entropy, entropy],
            memory,
            queries_added,
            anchors_added,
            anchors_removed,
            action: selection.action,
            retries,
            warnings,
            terminal: terminal.clone(),
            elapsed_ms: started.map(|t| t.elapsed().as_millis() as u64),
        });
        Ok(terminal.map(|t| EpisodeResult {
            answer: t.answer,
            rounds_used: t.rounds_used,
            frames_observed: t.frames_observed,
            termination: t.termination,
            trace: self.trace.clone(),
        }))
    }

    /// Fuse every candidate's scores and store them on the tree.
    fn fuse(&mut self) -> Result<(Vec<CandidateRecord>, f64)> {
        if self.candidates.is_empty() {
            return Ok((Vec::new(), 0.0));
        }
        let inputs: Vec<Candidate> = self
            .candidates
            .iter()
            .map(|&id| {
                let n = self.tree.node(id);
                Candidate {
                    node: id,
                    intrinsic: n.intrinsic_reward.unwrap_or(0.0),
                    query: n.query_score.unwrap_or(0.0),
                }
            })
            .collect();
        let (bundles, ctx) =
            self.strategies
                .fusion
                .fuse(&inputs, self.config.tau_c, self.config.entropy_scale)?;
        let records = bundles
            .iter()
            .map(|b| {
                let node = self.tree.node_mut(b.node);
                node.fused_score = Some(b.fused);
                CandidateRecord {
                    node: b.node,
                    start: node.interval.start.seconds(),
                    end: node.interval.end.seconds(),
                    r: b.intrinsic,
                    u: b.query,
                    h: b.fused,
                }
            })
            .collect();
        Ok((records, ctx.entropy))
    }
}

fn span(node: NodeId, interval: &SegmentInterval) -> Span {
    Span {
        node,
        start: interval.start.seconds(),
        end: interval.end.seconds(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::scripted::{ScriptedExtractor, ScriptedPolicy, ScriptedReward, ScriptedRetriever};
    use crate::backends::sim::sim_backends;
    use crate::backends::{RewardResponse, SegmentScore};
    use crate::simenv::{generate_episode, EpisodeParams};

    const SEVEN: [(i64, &str); 7] = [
        (10, "a"),
        (20, "b"),
        (30, "c"),
        (40, "d"),
        (50, "e"),
        (60, "f"),
        (70, "g"),
    ];

    fn video() -> VideoMeta {
        VideoMeta::uniform("v", 60.0, 1.0).unwrap()
    }

    fn instruction() -> Instruction {
        Instruction::new("what happens?", &["x", "y", "z"])
    }

    fn backends(reward: ScriptedReward, policy: ScriptedPolicy) -> (Backends, Arc<ScriptedReward>, Arc<ScriptedPolicy>) {
        let reward = Arc::new(reward);
        let policy = Arc::new(policy);
        let b = Backends {
            extractor: Arc::new(ScriptedExtractor::new().discover_ok(&["dog"])),
            retriever: Arc::new(ScriptedRetriever::new().hits("dog", &[(21.0, 0.9)])),
            reward: reward.clone(),
            policy: policy.clone(),
            retry: RetryPolicy::default(),
        };
        (b, reward, policy)
    }

    #[test]
    fn immediate_answer_ends_after_one_round() {
        let (b, _, _) = backends(ScriptedReward::new().scores(&SEVEN), ScriptedPolicy::new().say("B"));
        let r = run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()).unwrap();
        assert_eq!(r.answer, "B");
        assert_eq!(r.rounds_used, 1);
        assert_eq!(r.frames_observed, 6);
        assert_eq!(r.termination, Termination::PolicyAnswered);
        assert_eq!(r.trace.rounds.len(), 1);
        let round = &r.trace.rounds[0];
        assert_eq!(round.children.len(), 7);
        let open = round.children.iter().filter(|c| !c.atomic).count();
        assert_eq!(round.candidates.len(), open);
        assert!(round.frames.iter().any(|f| f.source == FrameSource::Anchor));
    }

    #[test]
    fn round_limit_forces_an_answer_from_earlier_text() {
        let reward = ScriptedReward::new().scores(&[
            (10, "nothing"),
            (20, "the answer is C"),
            (0, ""),
            (0, ""),
            (0, ""),
            (0, ""),
            (0, ""),
        ]);
        let (b, _, policy) = backends(reward, ScriptedPolicy::new().say("{Segment: 1}"));
        let config = EpisodeConfig {
            max_rounds: 1,
            ..EpisodeConfig::default()
        };
        let r = run_episode(&video(), &instruction(), &b, &config).unwrap();
        assert_eq!(r.termination, Termination::ForcedByRoundLimit);
        assert_eq!(r.answer, "C");
        assert!(policy.calls.lock().unwrap().iter().all(|c| c.0));
        match &r.trace.rounds[0].action {
            ActionRecord::Answer { forced, .. } => assert!(forced),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_segment_is_asked_for_once() {
        let mut partial: Vec<Option<SegmentScore>> = SEVEN
            .iter()
            .map(|&(score, e)| Some(SegmentScore { explanation: e.into(), score }))
            .collect();
        partial[3] = None;
        let reward = ScriptedReward::new()
            .reply(Ok(RewardResponse { scores: partial }))
            .scores(&SEVEN);
        let (b, reward, _) = backends(reward, ScriptedPolicy::new().say("A"));
        let r = run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()).unwrap();
        let round = &r.trace.rounds[0];
        assert_eq!(round.retries, 1);
        assert_eq!(round.children[3].raw_score, 40);
        assert_eq!(reward.calls.lock().unwrap().len(), 2);
        assert!(round.warnings.is_empty(), "{:?}", round.warnings);
    }

    #[test]
    fn segment_missing_twice_defaults_to_zero() {
        let (b, _, _) = backends(ScriptedReward::new(), ScriptedPolicy::new().say("A"));
        let r = run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()).unwrap();
        let round = &r.trace.rounds[0];
        assert!(round.children.iter().all(|c| c.raw_score == 0));
        assert_eq!(round.retries, 1);
        assert_eq!(round.warnings.len(), 7);
    }

    #[test]
    fn invalid_segment_gets_one_corrected_retry() {
        let policy = ScriptedPolicy::new().say("{Segment: 99}").say("{Segment: 2}").say("A");
        let reward = ScriptedReward::new().scores(&SEVEN).scores(&SEVEN);
        let (b, _, policy) = backends(reward, policy);
        let r = run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()).unwrap();
        let first = &r.trace.rounds[0];
        assert_eq!(first.action, ActionRecord::Explore { node: 2, fallback: false });
        assert_eq!(first.retries, 1);
        assert_eq!(r.trace.rounds[1].selected.node, 2);
        assert_eq!(policy.calls.lock().unwrap()[..2], [(false, false), (false, true)]);
    }

    #[test]
    fn unusable_replies_fall_back_to_argmax() {
        let policy = ScriptedPolicy::new().say("hmm").say("still thinking").say("A");
        let reward = ScriptedReward::new().scores(&SEVEN).scores(&SEVEN);
        let (b, _, _) = backends(reward, policy);
        let r = run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()).unwrap();
        // the last child has the top reward and sits far from the anchor
        let best = r.trace.rounds[0]
            .candidates
            .iter()
            .max_by(|a, b| a.h.total_cmp(&b.h))
            .unwrap()
            .node;
        assert_eq!(r.trace.rounds[0].action, ActionRecord::Explore { node: best, fallback: true });
    }

    #[test]
    fn history_grows_by_the_children_of_each_round() {
        let policy = ScriptedPolicy::new().say("{Segment: 1}").say("{Segment: 8}").say("A");
        let reward = ScriptedReward::new().scores(&SEVEN).scores(&SEVEN).scores(&SEVEN);
        let (b, reward, _) = backends(reward, policy);
        let r = run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()).unwrap();
        let calls = reward.calls.lock().unwrap();
        let seen: Vec<_> = calls.iter().map(|c| (c.kind, c.history_len)).collect();
        let mut expected = vec![(RoundKind::First, 0)];
        let mut total = 0;
        for round in &r.trace.rounds[..r.trace.rounds.len() - 1] {
            total += round.children.len();
            expected.push((RoundKind::Following, total));
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn backend_failure_keeps_the_partial_trace() {
        let reward = ScriptedReward::new()
            .scores(&SEVEN)
            .reply(Err(BackendError::Transport("down".into())))
            .reply(Err(BackendError::Transport("down".into())))
            .reply(Err(BackendError::Transport("down".into())));
        let (b, _, _) = backends(reward, ScriptedPolicy::new().say("{Segment: 1}"));
        match run_episode(&video(), &instruction(), &b, &EpisodeConfig::default()) {
            Err(Error::Episode { round, partial, source }) => {
                assert_eq!(round, 2);
                assert_eq!(partial.rounds.len(), 1);
                assert!(matches!(*source, Error::Backend { retries: 2, .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    fn sim_run(seed: u64, config: &EpisodeConfig) -> EpisodeResult {
        let ep = Arc::new(generate_episode(seed, &EpisodeParams::default()).unwrap());
        let b = sim_backends(ep.clone(), RetryPolicy::default());
        run_episode(&ep.video, &ep.instruction, &b, config).unwrap()
    }

    #[test]
    fn simulated_episodes_are_reproducible() {
        let config = EpisodeConfig {
            seed: 5,
            ..EpisodeConfig::default()
        };
        let a = sim_run(5, &config).trace.to_jsonl().unwrap();
        let b = sim_run(5, &config).trace.to_jsonl().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn search_invariants_hold_on_simulated_episodes() {
        let config = EpisodeConfig::default();
        let b = config.budget.total_frames;
        for seed in 0..30 {
            let r = sim_run(seed, &config);
            assert!(r.frames_observed <= config.max_total_frames + b, "seed {seed}");
            assert!(r.rounds_used <= config.max_rounds);
            let mut expanded = BTreeSet::new();
            for round in &r.trace.rounds {
                // the expanded leaf leaves the candidate set, children tile it
                assert!(expanded.insert(round.selected.node), "seed {seed}: node expanded twice");
                assert!(round.candidates.iter().all(|c| c.node != round.selected.node));
                assert_eq!(round.children.first().unwrap().start, round.selected.start);
                assert_eq!(round.children.last().unwrap().end, round.selected.end);
                assert!(round.children.windows(2).all(|w| w[0].end == w[1].start));
                assert!(round
                    .candidates
                    .windows(2)
                    .all(|w| (w[0].start, w[0].node) < (w[1].start, w[1].node)));
                assert!(round.memory.entries.len() <= round.memory.capacity);
                assert!((0.0..=1.0).contains(&round.entropy));
                for c in &round.candidates {
                    let (lo, hi) = (c.r.min(c.u), c.r.max(c.u));
                    assert!(lo - 1e-12 <= c.h && c.h <= hi + 1e-12);
                }
            }
        }
    }
}
