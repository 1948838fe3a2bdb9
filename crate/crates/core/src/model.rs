//! Timeline, segment tree, memory buffer and reward history.
//!
//! Time is measured in seconds. Every sampled frame lives on the discrete
//! frame grid declared by [`VideoMeta`]; segment boundaries are always grid
//! points once the root has been split.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// A finite, non-negative position on the video timeline, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Timestamp(f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);

    pub fn new(seconds: f64) -> Result<Self> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::rejected(format!(
                "timestamp must be finite and non-negative, got {seconds}"
            )));
        }
        // normalise -0.0
        Ok(Timestamp(seconds + 0.0))
    }

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Timestamp {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Timestamp::new(value)
    }
}

impl From<Timestamp> for f64 {
    fn from(t: Timestamp) -> f64 {
        t.0
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Video identity, duration, and the sampleable frame positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    duration: Timestamp,
    frame_grid: Vec<Timestamp>,
}

impl VideoMeta {
    pub fn new(
        video_id: impl Into<String>,
        duration: f64,
        frame_grid: Vec<f64>,
    ) -> Result<Self> {
        let duration = Timestamp::new(duration)?;
        if duration.seconds() <= 0.0 {
            return Err(Error::rejected("video duration must be positive"));
        }
        let grid = frame_grid
            .into_iter()
            .map(Timestamp::new)
            .collect::<Result<Vec<_>>>()?;
        if grid.is_empty() {
            return Err(Error::rejected("frame grid is empty"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::rejected("frame grid must be strictly increasing"));
        }
        if grid.last().is_some_and(|t| *t > duration) {
            return Err(Error::rejected("frame grid extends past the video duration"));
        }
        Ok(VideoMeta {
            video_id: video_id.into(),
            duration,
            frame_grid: grid,
        })
    }

    /// Grid of one frame every `step` seconds from 0 up to and including `duration`
    /// (when it falls on the step).
    pub fn uniform(video_id: impl Into<String>, duration: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::rejected("grid step must be positive"));
        }
        let count = (duration / step + 1e-9).floor() as usize;
        let grid = (0..=count).map(|i| i as f64 * step).collect();
        VideoMeta::new(video_id, duration, grid)
    }

    pub fn duration(&self) -> Timestamp {
        self.duration
    }

    pub fn frame_grid(&self) -> &[Timestamp] {
        &self.frame_grid
    }

    pub fn full_interval(&self) -> SegmentInterval {
        SegmentInterval {
            start: Timestamp::ZERO,
            end: self.duration,
        }
    }

    pub fn is_on_grid(&self, t: Timestamp) -> bool {
        self.frame_grid.binary_search(&t).is_ok()
    }

    /// Grid points strictly inside the open interval `(start, end)`.
    pub fn interior_points(&self, interval: &SegmentInterval) -> &[Timestamp] {
        let lo = self.frame_grid.partition_point(|t| *t <= interval.start);
        let hi = self.frame_grid.partition_point(|t| *t < interval.end);
        &self.frame_grid[lo..hi.max(lo)]
    }

    /// Grid points inside the closed interval `[start, end]`.
    pub fn closed_points(&self, interval: &SegmentInterval) -> &[Timestamp] {
        let lo = self.frame_grid.partition_point(|t| *t < interval.start);
        let hi = self.frame_grid.partition_point(|t| *t <= interval.end);
        &self.frame_grid[lo..hi.max(lo)]
    }

    /// Nearest grid point to `t`; exact ties go to the earlier point.
    pub fn snap_to_grid(&self, t: Timestamp) -> Result<Timestamp> {
        if t > self.duration {
            return Err(Error::rejected(format!(
                "timestamp {t} lies outside [0, {}]",
                self.duration
            )));
        }
        let idx = self.frame_grid.partition_point(|g| *g < t);
        let after = self.frame_grid.get(idx).copied();
        let before = idx.checked_sub(1).map(|i| self.frame_grid[i]);
        Ok(match (before, after) {
            (Some(b), Some(a)) => {
                if a.seconds() - t.seconds() < t.seconds() - b.seconds() {
                    a
                } else {
                    b
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("grid is never empty"),
        })
    }
}

/// A non-empty temporal interval `[start, end]` with `start < end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInterval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl SegmentInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let (start, end) = (Timestamp::new(start)?, Timestamp::new(end)?);
        if start >= end {
            return Err(Error::rejected(format!(
                "interval start {start} must precede end {end}"
            )));
        }
        Ok(SegmentInterval { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end.seconds() - self.start.seconds()
    }

    /// Half-open membership: a shared boundary belongs to the later segment,
    /// except the very end of the video, which belongs to the last segment.
    pub fn contains(&self, t: Timestamp, video_end: Timestamp) -> bool {
        (self.start <= t && t < self.end) || (t == self.end && self.end == video_end)
    }

    pub fn contains_strictly(&self, t: Timestamp) -> bool {
        self.start < t && t < self.end
    }
}

impl fmt::Display for SegmentInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// Cut an interval at strictly increasing interior times.
pub fn split_segment(
    interval: &SegmentInterval,
    cut_times: &[Timestamp],
) -> Result<Vec<SegmentInterval>> {
    for pair in cut_times.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::rejected(format!(
                "cut times must be strictly increasing (duplicate or unordered cut at {})",
                pair[1]
            )));
        }
    }
    if let Some(bad) = cut_times.iter().find(|t| !interval.contains_strictly(**t)) {
        return Err(Error::rejected(format!(
            "cut {bad} is not strictly inside {interval}"
        )));
    }
    let mut bounds = Vec::with_capacity(cut_times.len() + 2);
    bounds.push(interval.start);
    bounds.extend_from_slice(cut_times);
    bounds.push(interval.end);
    Ok(bounds
        .windows(2)
        .map(|w| SegmentInterval {
            start: w[0],
            end: w[1],
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNode {
    pub id: NodeId,
    pub interval: SegmentInterval,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub intrinsic_reward: Option<f64>,
    pub query_score: Option<f64>,
    pub fused_score: Option<f64>,
    pub trace: Option<String>,
    pub round_created: u32,
    /// No interior grid point: can never be expanded.
    pub atomic: bool,
}

impl SegmentNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Arena-backed search tree. Node 0 is the root covering the whole video.
#[derive(Clone, Debug)]
pub struct SegmentTree {
    nodes: Vec<SegmentNode>,
}

impl SegmentTree {
    pub fn new(video: &VideoMeta) -> Self {
        let root = video.full_interval();
        SegmentTree {
            nodes: vec![SegmentNode {
                id: 0,
                interval: root,
                parent: None,
                children: Vec::new(),
                intrinsic_reward: None,
                query_score: None,
                fused_score: None,
                trace: None,
                round_created: 0,
                atomic: video.interior_points(&root).is_empty(),
            }],
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn get(&self, id: NodeId) -> Option<&SegmentNode> {
        self.nodes.get(id)
    }

    pub fn node(&self, id: NodeId) -> &SegmentNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SegmentNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attach `intervals` as the children of `parent`. They must tile the parent.
    pub fn add_children(
        &mut self,
        parent: NodeId,
        intervals: &[SegmentInterval],
        round: u32,
        video: &VideoMeta,
    ) -> Result<Vec<NodeId>> {
        let parent_interval = self
            .get(parent)
            .ok_or_else(|| Error::rejected(format!("unknown node {parent}")))?
            .interval;
        if !self.nodes[parent].children.is_empty() {
            return Err(Error::rejected(format!("node {parent} is already expanded")));
        }
        let tiles = !intervals.is_empty()
            && intervals[0].start == parent_interval.start
            && intervals.last().map(|s| s.end) == Some(parent_interval.end)
            && intervals.windows(2).all(|w| w[0].end == w[1].start);
        if !tiles {
            return Err(Error::rejected(format!(
                "children do not partition parent {parent_interval}"
            )));
        }
        let mut ids = Vec::with_capacity(intervals.len());
        for interval in intervals {
            let id = self.nodes.len();
            self.nodes.push(SegmentNode {
                id,
                interval: *interval,
                parent: Some(parent),
                children: Vec::new(),
                intrinsic_reward: None,
                query_score: None,
                fused_score: None,
                trace: None,
                round_created: round,
                atomic: video.interior_points(interval).is_empty(),
            });
            ids.push(id);
        }
        self.nodes[parent].children = ids.clone();
        Ok(ids)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SegmentNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }
}

/// A frame held in working memory together with the reward it is credited with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub frame_time: Timestamp,
    pub associated_reward: f64,
    pub round_observed: u32,
}

impl MemoryEntry {
    /// Eviction order: lowest reward first, then oldest round, then earliest frame.
    pub fn eviction_order(&self, other: &Self) -> Ordering {
        self.associated_reward
            .total_cmp(&other.associated_reward)
            .then(self.round_observed.cmp(&other.round_observed))
            .then(self.frame_time.cmp(&other.frame_time))
    }
}

/// Capacity-bounded frame memory that drops its lowest-reward frames on overflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    entries: Vec<MemoryEntry>,
    capacity: usize,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::rejected("memory capacity must be positive"));
        }
        Ok(MemoryBuffer {
            entries: Vec::new(),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries ordered by frame time.
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_times(&self) -> Vec<Timestamp> {
        self.entries.iter().map(|e| e.frame_time).collect()
    }

    /// Merge `new_entries` and evict down to capacity. Returns the evicted entries in
    /// eviction order.
    pub fn update(&mut self, new_entries: &[MemoryEntry]) -> Result<Vec<MemoryEntry>> {
        for entry in new_entries {
            if !(0.0..=1.0).contains(&entry.associated_reward) {
                return Err(Error::rejected(format!(
                    "memory reward {} outside [0, 1]",
                    entry.associated_reward
                )));
            }
            match self
                .entries
                .binary_search_by(|e| e.frame_time.cmp(&entry.frame_time))
            {
                Ok(idx) => {
                    if entry.associated_reward > self.entries[idx].associated_reward {
                        self.entries[idx] = *entry;
                    }
                }
                Err(idx) => self.entries.insert(idx, *entry),
            }
        }
        let mut evicted = Vec::new();
        while self.entries.len() > self.capacity {
            let (idx, _) = self
                .entries
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.eviction_order(b.1))
                .expect("non-empty when over capacity");
            evicted.push(self.entries.remove(idx));
        }
        Ok(evicted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub round: u32,
    pub node: NodeId,
    pub interval: SegmentInterval,
    pub trace: String,
    /// Raw rubric score, 0..=100.
    pub raw_score: i64,
    pub intrinsic_reward: f64,
}

/// Append-only log of every intrinsic reward handed out during an episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardHistory {
    records: Vec<RewardRecord>,
}

impl RewardHistory {
    pub fn push(&mut self, record: RewardRecord) -> Result<()> {
        if self.records.last().is_some_and(|r| r.round > record.round) {
            return Err(Error::rejected("reward history rounds must be non-decreasing"));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[RewardRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(v: &[f64]) -> Vec<Timestamp> {
        v.iter().map(|s| Timestamp::new(*s).unwrap()).collect()
    }

    fn entry(t: f64, reward: f64, round: u32) -> MemoryEntry {
        MemoryEntry {
            frame_time: Timestamp::new(t).unwrap(),
            associated_reward: reward,
            round_observed: round,
        }
    }

    #[test]
    fn split_at_two_cuts() {
        let parent = SegmentInterval::new(0.0, 100.0).unwrap();
        let parts = split_segment(&parent, &ts(&[30.0, 60.0])).unwrap();
        let bounds: Vec<_> = parts
            .iter()
            .map(|p| (p.start.seconds(), p.end.seconds()))
            .collect();
        assert_eq!(bounds, vec![(0.0, 30.0), (30.0, 60.0), (60.0, 100.0)]);
    }

    #[test]
    fn split_without_cuts_is_identity() {
        let parent = SegmentInterval::new(0.0, 100.0).unwrap();
        assert_eq!(split_segment(&parent, &[]).unwrap(), vec![parent]);
    }

    #[test]
    fn split_rejects_boundary_and_duplicate_cuts() {
        let parent = SegmentInterval::new(10.0, 20.0).unwrap();
        assert!(matches!(
            split_segment(&parent, &ts(&[10.0])),
            Err(Error::RejectedInput(_))
        ));
        assert!(split_segment(&parent, &ts(&[12.0, 12.0])).is_err());
        assert!(split_segment(&parent, &ts(&[15.0, 12.0])).is_err());
        assert!(split_segment(&parent, &ts(&[25.0])).is_err());
    }

    #[test]
    fn snapping() {
        let video = VideoMeta::new("v", 3.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let snap = |t: f64| video.snap_to_grid(Timestamp::new(t).unwrap()).unwrap().seconds();
        assert_eq!(snap(2.4), 2.0);
        assert_eq!(snap(2.5), 2.0);
        assert_eq!(snap(2.6), 3.0);
        assert_eq!(snap(3.0), 3.0);

        let eight = VideoMeta::uniform("v", 8.0, 1.0).unwrap();
        assert!(eight.snap_to_grid(Timestamp::new(9.0).unwrap()).is_err());
        assert!(Timestamp::new(-1.0).is_err());
        assert!(Timestamp::new(f64::NAN).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(VideoMeta::new("v", 10.0, vec![0.0, 2.0, 1.0]).is_err());
        assert!(VideoMeta::new("v", 10.0, vec![0.0, 11.0]).is_err());
        assert!(VideoMeta::new("v", 10.0, vec![]).is_err());
        let v = VideoMeta::uniform("v", 10.0, 1.0).unwrap();
        assert_eq!(v.frame_grid().len(), 11);
        let seg = SegmentInterval::new(2.0, 5.0).unwrap();
        assert_eq!(v.interior_points(&seg), &ts(&[3.0, 4.0])[..]);
        assert_eq!(v.closed_points(&seg), &ts(&[2.0, 3.0, 4.0, 5.0])[..]);
    }

    #[test]
    fn half_open_membership() {
        let end = Timestamp::new(100.0).unwrap();
        let a = SegmentInterval::new(30.0, 60.0).unwrap();
        let last = SegmentInterval::new(60.0, 100.0).unwrap();
        let t = |s: f64| Timestamp::new(s).unwrap();
        assert!(a.contains(t(30.0), end));
        assert!(!a.contains(t(60.0), end));
        assert!(last.contains(t(60.0), end));
        assert!(last.contains(t(100.0), end));
    }

    #[test]
    fn memory_evicts_lowest_reward() {
        let mut buf = MemoryBuffer::new(3).unwrap();
        buf.update(&[entry(1.0, 0.9, 1), entry(2.0, 0.2, 1), entry(3.0, 0.5, 1)])
            .unwrap();
        let evicted = buf.update(&[entry(4.0, 0.7, 2)]).unwrap();
        assert_eq!(evicted, vec![entry(2.0, 0.2, 1)]);
        let kept: Vec<_> = buf.entries().iter().map(|e| e.frame_time.seconds()).collect();
        assert_eq!(kept, vec![1.0, 3.0, 4.0]);
    }

    #[test]
    fn memory_under_capacity_keeps_everything() {
        let mut buf = MemoryBuffer::new(3).unwrap();
        assert!(buf.update(&[entry(1.0, 0.1, 1)]).unwrap().is_empty());
        assert_eq!(buf.len(), 1);
        assert!(MemoryBuffer::new(0).is_err());
    }

    #[test]
    fn memory_tie_evicts_oldest_round_then_earliest_frame() {
        let mut buf = MemoryBuffer::new(2).unwrap();
        buf.update(&[entry(1.0, 0.5, 1), entry(2.0, 0.5, 2)]).unwrap();
        let evicted = buf.update(&[entry(3.0, 0.5, 3)]).unwrap();
        assert_eq!(evicted, vec![entry(1.0, 0.5, 1)]);

        let mut same_round = MemoryBuffer::new(1).unwrap();
        let evicted = same_round
            .update(&[entry(5.0, 0.5, 1), entry(4.0, 0.5, 1)])
            .unwrap();
        assert_eq!(evicted, vec![entry(4.0, 0.5, 1)]);
    }

    #[test]
    fn memory_replaces_same_frame_only_when_reward_rises() {
        let mut buf = MemoryBuffer::new(4).unwrap();
        buf.update(&[entry(1.0, 0.4, 1)]).unwrap();
        buf.update(&[entry(1.0, 0.3, 2)]).unwrap();
        assert_eq!(buf.entries(), &[entry(1.0, 0.4, 1)]);
        buf.update(&[entry(1.0, 0.6, 3)]).unwrap();
        assert_eq!(buf.entries(), &[entry(1.0, 0.6, 3)]);
        assert!(buf.update(&[entry(2.0, 1.5, 3)]).is_err());
    }

    #[test]
    fn reward_history_is_round_monotone() {
        let mut h = RewardHistory::default();
        let rec = |round| RewardRecord {
            round,
            node: 1,
            interval: SegmentInterval::new(0.0, 1.0).unwrap(),
            trace: String::new(),
            raw_score: 0,
            intrinsic_reward: 0.0,
        };
        h.push(rec(1)).unwrap();
        h.push(rec(2)).unwrap();
        assert!(h.push(rec(1)).is_err());
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn tree_children_must_tile_parent() {
        let video = VideoMeta::uniform("v", 10.0, 1.0).unwrap();
        let mut tree = SegmentTree::new(&video);
        let gap = [
            SegmentInterval::new(0.0, 4.0).unwrap(),
            SegmentInterval::new(5.0, 10.0).unwrap(),
        ];
        assert!(tree.add_children(0, &gap, 1, &video).is_err());
        let ok = split_segment(&video.full_interval(), &ts(&[4.0, 5.0])).unwrap();
        let ids = tree.add_children(0, &ok, 1, &video).unwrap();
        assert_eq!(ids, vec![1, 2, 3]);
        assert!(tree.node(2).atomic);
        assert!(!tree.node(1).atomic);
        assert_eq!(tree.leaves().count(), 3);
    }
}
