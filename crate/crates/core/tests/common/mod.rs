#![allow(dead_code)]

pub mod stub;

use std::sync::Arc;

use longshot::backends::scripted::{ScriptedExtractor, ScriptedPolicy, ScriptedReward, ScriptedRetriever};
use longshot::backends::{Backends, Instruction, RetryPolicy};
use longshot::engine::EpisodeConfig;
use longshot::expansion::ExpansionBudget;
use longshot::model::VideoMeta;

/// The scripted two-round episode behind the golden trace.
///
/// Round 1 expands the root around the initial anchors, a new query merges one
/// cluster and adds another, and the policy picks node 5. Round 2 expands it around the new anchor, memory
/// overflows, and the policy answers.
pub struct TwoRound {
    pub video: VideoMeta,
    pub instruction: Instruction,
    pub backends: Backends,
    pub config: EpisodeConfig,
}

pub fn two_round() -> TwoRound {
    let video = VideoMeta::uniform("golden", 60.0, 1.0).unwrap();
    let instruction = Instruction::new("What colour is the mug on the desk?", &["red", "blue", "green"]);
    let extractor = ScriptedExtractor::new()
        .discover_ok(&["mug on desk"])
        .update_ok(&["laptop screen", "mug on desk"]);
    let retriever = ScriptedRetriever::new()
        .hits("mug on desk", &[(12.0, 0.8), (14.0, 0.6), (41.0, 0.7)])
        .hits("laptop screen", &[(50.0, 0.9), (16.0, 0.85)]);
    let reward = ScriptedReward::new()
        .scores(&[
            (41, "desk edge in both frames"),
            (43, "a mug appears near the end"),
            (40, "empty corridor"),
            (42, "the desk again, mug partly hidden"),
            (40, "outdoor shot"),
        ])
        .scores(&[
            (30, "lamp only"),
            (90, "the mug is clearly blue"),
            (35, "hand reaching"),
            (10, "wall"),
            (20, "keyboard"),
        ]);
    let policy = ScriptedPolicy::new().say("{Segment: 5}").say("The answer is B");
    TwoRound {
        video,
        instruction,
        backends: Backends {
            extractor: Arc::new(extractor),
            retriever: Arc::new(retriever),
            reward: Arc::new(reward),
            policy: Arc::new(policy),
            retry: RetryPolicy::default(),
        },
        config: EpisodeConfig {
            budget: ExpansionBudget::new(4, 2).unwrap(),
            memory_capacity: 6,
            seed: 7,
            ..EpisodeConfig::default()
        },
    }
}
