//! Prompt templates for the live models and the blocks that fill them.
//!
//! Placeholders are `{name}`; rendering fails on any placeholder left unbound.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{Instruction, PolicyRequest, RewardRequest, RoundKind};
use crate::error::BackendError;
use crate::model::{RewardHistory, SegmentInterval, Timestamp};

pub const REWARD_FIRST_ROUND: &str = r#"/* Task Description */
You are acting as a reward model to guide the video question-answering process, with access to a {duration}-frame video ({duration} seconds in duration). You are provided with {frame_number} uniformly sampled frames from the video, at the following frame indices: {frame_block}, which divide the video into {segment_number} distinct segments.

/* Segment Information */
{segment_block}

/* Reward Instruction */
Your task is to evaluate the relevance of each segment in answering the question below, to assist in identifying the segment(s) that most effectively answer the question.
Question: {question}
Options: {options}
Treat the start and end frames of every sub-segment as cues for reconstructing what the segment might contain. Use these cues to judge how informative the segment is for answering the question and assign a score between 0% and 100%. Explain how the boundary frames shape your interpretation and why they lead you to the assigned relevance score. Please give the answer in the format: {"Segment #": {"explanation": str, "score": int}}
"#;

pub const REWARD_FOLLOWING_ROUNDS: &str = r#"/* Task Description */
You are acting as a reward model in a multi-round video question-answering process. You have access to a {duration}-frame video ({duration} seconds), along with results from a previous round of evaluation. In this round, one specific segment has been further divided to provide more detailed analysis. You are provided with {frame_number} new sampled frames to assess these sub-segments in relation to the question, at the following frame indices: {frame_block}.

/* Goal Question and Options*/
Question:{question}
Options:{options}

/* Historical Segment Information */
In the last round, the video was divided into {candidate_count} segments, each evaluated for its relevance to the goal question. Here are the results from all previous rounds:
{historical_block}

/* Current Segment Information */
In this round, segment {parent_label} has been further explored with {frame_number} new uniformly sampled frames, dividing it into {segment_number} new sub-segments:
{segment_block}

/* Reward Instruction */
Your task is to evaluate these new sub-segments for relevance to the original goal question based on provided frames, while considering the context and results from previous rounds. Treat the start and end frames of every sub-segment as cues for reconstructing what the segment might contain. Use these cues to judge how informative the segment is for answering the question and assign a score between 0% and 100%. Explain how the boundary frames shape your interpretation and why they lead you to the assigned relevance score. Please respond in the format: {"Segment #": {"explanation": str, "score": int}}
"#;

pub const SELECTION: &str = r#"/* Task Description */
You are a helpful assistant with access to a video that is {duration} frames long ({duration} seconds).
You are tasked with exploring the video to gather the information needed to answer a specific question with complete confidence.
Question:{question}
Options:{options}
At each step, you may select one segment of the video to examine. Once you choose a segment, you will receive a set of representative frames sampled from that segment. Use each exploration step strategically to uncover key details, progressively refining your understanding of the video's content. Continue exploring as needed until you have acquired all information necessary to answer the question.
In this round, you are provided with {memory_count} sampled frames stored in the memory module, with frame indices: {memory_indices}. In the history exploration process, the video has been divided into {candidate_total} distinct segments, each covering a specific interval. The interval and relevance score for each segment are detailed below.

/* Segment Information */
{candidate_block}

/* Exploration Instruction */
For each segment, we provide a fused score that adaptively combines two components to support your exploration: (1) an intrinsic reward, computed by an auxiliary video assistant based on the segment's relevance to the question, and (2) a query score that reflects how many relevant clips are contained in the segment . Focus on the segments most likely to contain key information for confidently answering the question. Now, proceed with your exploration, selecting the segment you wish to explore. Please provide your choice in the following format: {Segment: int}.

Before drawing a conclusion, examine the relevant details as thoroughly as possible to gather sufficient information. Every action you take should aim to deepen your understanding of the video, especially the parts related to the question. You have ample time, so focus on providing the most accurate answer possible.

If you have enough information to answer the question, select the best answer from the options and directly provide the answer without giving any explanation.
"#;

pub const QUERY_GENERATION: &str = r#"/* Role */
Produce short text queries for a VideoCLIP-style retriever.

/* Input */
ONE multiple-choice question about a video (with options).
Question: {question}
Options: {options}

/* Goal */
Do not answer the question. Convert the question into 1-5 stand-alone semantic queries that can be fed directly into the text encoder to retrieve relevant clips.

/* Output Format */
- Return only a JSON array of strings, length 1-5, no extra text.
- Each query must contain 6-12 lowercase words, concise and concrete.

/* Writing Rules */
1) Prefer copying key phrases from the question/options; avoid adding specific names, places, colors, or timestamps that are not present in the input.
2) If the question includes a temporal anchor (e.g., "after the interview with xxx"), include that anchor verbatim.
3) Each query should be a compact description: [temporal anchor if any] + [target from options] + [simple action or neutral cue].
4) No duplicates. If fewer high-quality queries are possible, output fewer.

/* Example Format Only (not content) */
Reply strictly in JSON format as:
{"query1": "...", "query2": "...", ...}
with no additional text.
"#;

pub const QUERY_UPDATE: &str = r#"You are a video-understanding assistant.

/* Input Information */
- Frames with timestamps: {time_of_frames}
- A multiple-choice question with options
Question: {question}
Options: {options}
- Historical semantic queries information (already known):
{history_queries}

/* Task */
From the current frames only, extract new, concrete semantic queries that can guide subsequent retrieval or exploration toward answering the question.

/* Strict Rules */
1) Output only short, concrete semantic queries (nouns or verb-noun phrases with less than 10 words). No full sentences.
2) Each query must be directly grounded in the provided frames and must not appear in the historical information.
3) Avoid generic words ("scene", "shot", "clip") and avoid speculation (no unseen colors, names, or places).
4) Provide 2-5 items. If no new cues exist, return an empty dict {}.
5) Prefer salient, discriminative tokens that are easy to search (objects, OCR snippets, logos, tools, distinctive props, on-screen text, gestures, sound-indicated events).

/* Output Format */
Reply strictly in JSON as:
{"query1": "...", "query2": "...", ...}
with no extra text.

/* Negative Example (do NOT do this) */
- ["Frame 6 shows the villain in a shattered mirror environment with broken glass pieces around"]
"#;

/// Appended to the selection prompt once exploration limits are reached.
pub const ANSWER_NOW: &str = "\nThe exploration budget is exhausted. Do not select another segment: reply now with the letter of the best option only.\n";

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("valid placeholder pattern"));

/// Substitute every `{name}` in `template`. Unknown names are an error.
pub fn render(template: &str, bindings: &BTreeMap<&str, String>) -> Result<String, BackendError> {
    let mut missing = Vec::new();
    let out = PLACEHOLDER.replace_all(template, |caps: &regex::Captures<'_>| {
        let name = &caps[1];
        match bindings.get(name) {
            Some(v) => v.clone(),
            None => {
                missing.push(name.to_string());
                caps[0].to_string()
            }
        }
    });
    if missing.is_empty() {
        Ok(out.into_owned())
    } else {
        Err(BackendError::Config(format!(
            "unbound prompt placeholders: {}",
            missing.join(", ")
        )))
    }
}

/// Seconds without a trailing `.0` for whole values.
pub fn fmt_time(t: Timestamp) -> String {
    let s = t.seconds();
    if s.fract() == 0.0 && s.abs() < 1e15 {
        format!("{}", s as i64)
    } else {
        format!("{s}")
    }
}

pub fn frame_block(frames: &[Timestamp]) -> String {
    frames.iter().map(|t| fmt_time(*t)).collect::<Vec<_>>().join(", ")
}

pub fn seconds_list(frames: &[Timestamp]) -> String {
    frames
        .iter()
        .map(|t| format!("{}s", fmt_time(*t)))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn segment_block(segments: &[SegmentInterval]) -> String {
    segments
        .iter()
        .enumerate()
        .map(|(i, s)| format!("Segment {i}: [{}s, {}s]", fmt_time(s.start), fmt_time(s.end)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn historical_block(history: &RewardHistory) -> String {
    if history.is_empty() {
        return "(none)".into();
    }
    history
        .records()
        .iter()
        .map(|r| {
            format!(
                "Round {} - Segment {}: [{}s, {}s], score={}, explanation={}",
                r.round,
                r.node,
                fmt_time(r.interval.start),
                fmt_time(r.interval.end),
                r.raw_score,
                one_line(&r.trace)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn instruction_bindings(instruction: &Instruction) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("question", instruction.question.clone()),
        ("options", instruction.render_options()),
    ])
}

pub fn reward_prompt(req: &RewardRequest<'_>) -> Result<String, BackendError> {
    let mut b = instruction_bindings(req.instruction);
    b.insert("duration", fmt_time(req.video.duration()));
    b.insert("frame_number", req.frames.len().to_string());
    b.insert("frame_block", frame_block(req.frames));
    b.insert("segment_number", req.segments.len().to_string());
    b.insert("segment_block", segment_block(req.segments));
    match req.kind {
        RoundKind::First => render(REWARD_FIRST_ROUND, &b),
        RoundKind::Following => {
            b.insert("candidate_count", req.candidate_count.to_string());
            b.insert("historical_block", historical_block(req.history));
            b.insert("parent_label", req.parent.to_string());
            render(REWARD_FOLLOWING_ROUNDS, &b)
        }
    }
}

pub fn candidate_block(req: &PolicyRequest<'_>) -> String {
    req.candidates
        .iter()
        .map(|c| {
            format!(
                "Segment {}: span=[{},{}], score={:.4}, explanation={}",
                c.node,
                fmt_time(c.interval.start),
                fmt_time(c.interval.end),
                c.fused,
                one_line(&c.explanation)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn selection_prompt(req: &PolicyRequest<'_>) -> Result<String, BackendError> {
    let mut b = instruction_bindings(req.instruction);
    b.insert("duration", fmt_time(req.video.duration()));
    b.insert("memory_count", req.memory.len().to_string());
    b.insert("memory_indices", frame_block(req.memory));
    b.insert("candidate_total", req.candidates.len().to_string());
    b.insert("candidate_block", candidate_block(req));
    let mut text = render(SELECTION, &b)?;
    if req.force_answer {
        text.push_str(ANSWER_NOW);
    }
    if let Some(notice) = &req.notice {
        text.push('\n');
        text.push_str(notice);
        text.push('\n');
    }
    Ok(text)
}

pub fn query_generation_prompt(instruction: &Instruction) -> Result<String, BackendError> {
    render(QUERY_GENERATION, &instruction_bindings(instruction))
}

pub fn query_update_prompt(
    instruction: &Instruction,
    frames: &[Timestamp],
    history: &[String],
) -> Result<String, BackendError> {
    let mut b = instruction_bindings(instruction);
    b.insert("time_of_frames", seconds_list(frames));
    b.insert(
        "history_queries",
        if history.is_empty() {
            "(none)".to_string()
        } else {
            history.iter().map(|q| format!("- {q}")).collect::<Vec<_>>().join("\n")
        },
    );
    render(QUERY_UPDATE, &b)
}
