//! Frame sampling for node expansion: top-similarity anchors first, then an exact
//! 1-D minimax coverage completion over the segment's grid.
//!
//! The coverage domain is every grid point of the closed segment; only sampled
//! frames cover, never the segment endpoints. Frames are interior grid points.
//!
//! Solving for the optimum radius `ρ*` uses two facts:
//! * feasibility of a radius is decided by a greedy left-to-right sweep that puts
//!   each new frame as far right as possible, honoring the fixed frames, and
//! * `ρ*` is one of the pairwise distances between domain points.
//!
//! A real-valued bisection narrows `ρ*` down, then a short walk over the remaining
//! distance values pins it exactly. Among all optimal frame sets the lexicographically
//! earliest one is built slot by slot.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::model::{split_segment, SegmentInterval, Timestamp, VideoMeta};

/// Absolute slack on distance comparisons, in seconds.
const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionBudget {
    pub total_frames: usize,
    pub anchor_frames: usize,
}

impl ExpansionBudget {
    pub fn new(total_frames: usize, anchor_frames: usize) -> Result<Self> {
        if total_frames == 0 {
            return Err(Error::rejected("frame budget must be positive"));
        }
        if anchor_frames > total_frames {
            return Err(Error::rejected(format!(
                "anchor budget {anchor_frames} exceeds frame budget {total_frames}"
            )));
        }
        Ok(ExpansionBudget {
            total_frames,
            anchor_frames,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub frames: Vec<Timestamp>,
    pub children: Vec<SegmentInterval>,
    pub achieved_radius: f64,
    pub anchor_frames: Vec<Timestamp>,
}

impl ExpansionResult {
    pub fn is_anchor(&self, t: Timestamp) -> bool {
        self.anchor_frames.binary_search(&t).is_ok()
    }
}

/// Up to `budget` anchors strictly inside the segment, by descending similarity
/// (ties: earlier time). Returned in time order.
pub fn select_segment_anchors(
    segment: &SegmentInterval,
    anchors: &AnchorSet,
    budget: usize,
    video_end: Timestamp,
) -> Vec<Timestamp> {
    let mut inside: Vec<_> = anchors
        .anchors_in(segment, video_end)
        .filter(|a| segment.contains_strictly(a.frame_time))
        .collect();
    inside.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.frame_time.cmp(&b.frame_time))
    });
    let mut picked: Vec<Timestamp> = inside.iter().take(budget).map(|a| a.frame_time).collect();
    picked.sort();
    picked
}

/// Largest distance from a domain point to its nearest frame. Infinite without frames.
pub fn coverage_radius(domain: &[f64], frames: &[f64]) -> f64 {
    if frames.is_empty() {
        return f64::INFINITY;
    }
    domain
        .iter()
        .map(|&d| {
            let i = frames.partition_point(|&f| f < d);
            let right = frames.get(i).map_or(f64::INFINITY, |&f| f - d);
            let left = i.checked_sub(1).map_or(f64::INFINITY, |j| d - frames[j]);
            left.min(right)
        })
        .fold(0.0, f64::max)
}

struct Coverage<'a> {
    domain: &'a [f64],
    /// Interior grid points that are not preselected.
    free: Vec<f64>,
}

impl Coverage<'_> {
    /// Frames needed from `free[avail_from..]` to cover the domain at radius `rho`,
    /// given the sorted `fixed` frames. `None` when infeasible or above `limit`.
    fn min_needed(&self, rho: f64, fixed: &[f64], avail_from: usize, limit: usize) -> Option<usize> {
        let reach = rho + EPS;
        let free = &self.free[avail_from.min(self.free.len())..];
        let mut pos = 0;
        let mut count = 0;
        let mut last: Option<f64> = None;
        while pos < self.domain.len() {
            let p = self.domain[pos];
            if let Some(l) = last.filter(|l| (p - l).abs() <= reach) {
                pos = self.skip_past(l + reach);
                continue;
            }
            let fi = fixed.partition_point(|&f| f <= p + reach);
            if let Some(&f) = fi.checked_sub(1).map(|i| &fixed[i]).filter(|&&f| p - f <= reach) {
                pos = self.skip_past(f + reach);
                continue;
            }
            let ci = free.partition_point(|&c| c <= p + reach);
            let c = *ci.checked_sub(1).map(|i| &free[i])?;
            if p - c > reach {
                return None;
            }
            count += 1;
            if count > limit {
                return None;
            }
            last = Some(c);
        }
        Some(count)
    }

    fn skip_past(&self, x: f64) -> usize {
        self.domain.partition_point(|&d| d <= x)
    }

    fn first_uncovered(&self, rho: f64, fixed: &[f64]) -> Option<f64> {
        let reach = rho + EPS;
        let mut pos = 0;
        while pos < self.domain.len() {
            let p = self.domain[pos];
            let fi = fixed.partition_point(|&f| f <= p + reach);
            match fi.checked_sub(1).map(|i| fixed[i]).filter(|&f| p - f <= reach) {
                Some(f) => pos = self.skip_past(f + reach),
                None => return Some(p),
            }
        }
        None
    }

    fn feasible(&self, rho: f64, fixed: &[f64], budget: usize) -> bool {
        self.min_needed(rho, fixed, 0, budget).is_some()
    }

    /// Smallest pairwise domain distance strictly greater than `x`.
    fn next_distance_above(&self, x: f64) -> Option<f64> {
        let d = self.domain;
        (0..d.len())
            .filter_map(|i| {
                let j = i + 1 + d[i + 1..].partition_point(|&v| v - d[i] <= x);
                d.get(j).map(|&v| v - d[i])
            })
            .min_by(f64::total_cmp)
    }

    fn optimal_radius(&self, fixed: &[f64], budget: usize) -> f64 {
        let span = self.domain[self.domain.len() - 1] - self.domain[0];
        if self.feasible(0.0, fixed, budget) {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0_f64, span);
        for _ in 0..100 {
            if hi - lo <= 1e-7 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.feasible(mid, fixed, budget) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // the optimum is the first feasible distance value above `lo`
        loop {
            match self.next_distance_above(lo) {
                Some(v) if self.feasible(v, fixed, budget) => return v,
                Some(v) => lo = v,
                None => return span,
            }
        }
    }

    /// Lexicographically earliest optimal completion with exactly `budget` free frames.
    fn lex_min_completion(&self, rho: f64, pre: &[f64], budget: usize) -> Vec<f64> {
        let mut chosen: Vec<f64> = Vec::with_capacity(budget);
        let mut start = 0;
        for slot in 0..budget {
            let rem = budget - slot;
            let mut fixed: Vec<f64> = pre.iter().chain(chosen.iter()).copied().collect();
            fixed.sort_by(f64::total_cmp);
            let needed_ok = |i: usize| {
                let mut with = fixed.clone();
                let at = with.partition_point(|&f| f < self.free[i]);
                with.insert(at, self.free[i]);
                self.min_needed(rho, &with, i + 1, rem - 1).is_some()
            };
            let count_ok = |i: usize| self.free.len() - i - 1 >= rem - 1;
            let pick = if needed_ok(start) && count_ok(start) {
                start
            } else {
                let q = self
                    .first_uncovered(rho, &fixed)
                    .expect("an unfinished optimal completion leaves a point uncovered");
                let lo = start + self.free[start..].partition_point(|&c| c < q - rho - EPS);
                let hi = start + self.free[start..].partition_point(|&c| c <= q + rho + EPS);
                let (mut a, mut b) = (lo, hi);
                while a < b {
                    let m = a + (b - a) / 2;
                    if needed_ok(m) {
                        b = m;
                    } else {
                        a = m + 1;
                    }
                }
                debug_assert!(a < hi && count_ok(a), "optimal completion must exist");
                a
            };
            chosen.push(self.free[pick]);
            start = pick + 1;
        }
        chosen
    }
}

/// Superset of `preselected` with exactly `total_b` frames (or every interior grid
/// point if there are fewer) minimising the coverage radius over the segment's grid.
/// Returns the frames in time order and the achieved radius.
pub fn coverage_complete(
    segment: &SegmentInterval,
    preselected: &[Timestamp],
    total_b: usize,
    video: &VideoMeta,
) -> Result<(Vec<Timestamp>, f64)> {
    let mut pre = preselected.to_vec();
    pre.sort();
    if pre.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::rejected("preselected frames must be distinct"));
    }
    for t in &pre {
        if !segment.contains_strictly(*t) || !video.is_on_grid(*t) {
            return Err(Error::rejected(format!(
                "preselected frame {t} is not an interior grid point of {segment}"
            )));
        }
    }
    if pre.len() > total_b {
        return Err(Error::rejected(format!(
            "{} preselected frames exceed the budget of {total_b}",
            pre.len()
        )));
    }
    let interior = video.interior_points(segment);
    let domain: Vec<f64> = video.closed_points(segment).iter().map(|t| t.seconds()).collect();
    if interior.len() <= total_b {
        let frames = interior.to_vec();
        let secs: Vec<f64> = frames.iter().map(|t| t.seconds()).collect();
        return Ok((frames, coverage_radius(&domain, &secs)));
    }
    let pre_secs: Vec<f64> = pre.iter().map(|t| t.seconds()).collect();
    let budget = total_b - pre.len();
    let frames: Vec<Timestamp> = if budget == 0 {
        pre
    } else {
        let cov = Coverage {
            domain: &domain,
            free: interior
                .iter()
                .filter(|t| pre.binary_search(t).is_err())
                .map(|t| t.seconds())
                .collect(),
        };
        let rho = cov.optimal_radius(&pre_secs, budget);
        let added = cov.lex_min_completion(rho, &pre_secs, budget);
        let mut all: Vec<Timestamp> = pre
            .iter()
            .copied()
            .chain(added.into_iter().map(|s| Timestamp::new(s).expect("grid point")))
            .collect();
        all.sort();
        all
    };
    let secs: Vec<f64> = frames.iter().map(|t| t.seconds()).collect();
    Ok((frames, coverage_radius(&domain, &secs)))
}

/// Anchor-prioritised expansion of one segment.
pub fn expand(
    segment: &SegmentInterval,
    anchors: &AnchorSet,
    budget: ExpansionBudget,
    video: &VideoMeta,
) -> Result<ExpansionResult> {
    let picked = select_segment_anchors(segment, anchors, budget.anchor_frames, video.duration());
    expand_with(segment, picked, budget.total_frames, video)
}

fn expand_with(
    segment: &SegmentInterval,
    anchor_frames: Vec<Timestamp>,
    total_b: usize,
    video: &VideoMeta,
) -> Result<ExpansionResult> {
    if video.interior_points(segment).is_empty() {
        return Err(Error::Unexpandable {
            start: segment.start.seconds(),
            end: segment.end.seconds(),
        });
    }
    let (frames, achieved_radius) = coverage_complete(segment, &anchor_frames, total_b, video)?;
    let children = split_segment(segment, &frames)?;
    Ok(ExpansionResult {
        frames,
        children,
        achieved_radius,
        anchor_frames,
    })
}

/// How a selected node is turned into sampled frames and children.
pub trait ExpansionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn expand(
        &self,
        segment: &SegmentInterval,
        anchors: &AnchorSet,
        budget: ExpansionBudget,
        video: &VideoMeta,
    ) -> Result<ExpansionResult>;
}

/// Anchors first, coverage completion after.
#[derive(Clone, Copy, Debug, Default)]
pub struct SemanticGuided;

impl ExpansionStrategy for SemanticGuided {
    fn name(&self) -> &'static str {
        "semantic-guided"
    }

    fn expand(
        &self,
        segment: &SegmentInterval,
        anchors: &AnchorSet,
        budget: ExpansionBudget,
        video: &VideoMeta,
    ) -> Result<ExpansionResult> {
        expand(segment, anchors, budget, video)
    }
}

/// Pure minimax coverage; anchors are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformCoverage;

impl ExpansionStrategy for UniformCoverage {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn expand(
        &self,
        segment: &SegmentInterval,
        _anchors: &AnchorSet,
        budget: ExpansionBudget,
        video: &VideoMeta,
    ) -> Result<ExpansionResult> {
        expand_with(segment, Vec::new(), budget.total_frames, video)
    }
}

/// Exhaustive reference solver: every `total_b`-superset of `preselected`.
/// Returns the lexicographically earliest optimal set and its radius.
pub fn brute_force_coverage(
    segment: &SegmentInterval,
    preselected: &[Timestamp],
    total_b: usize,
    video: &VideoMeta,
) -> (Vec<f64>, f64) {
    let domain: Vec<f64> = video.closed_points(segment).iter().map(|t| t.seconds()).collect();
    let interior: Vec<f64> = video.interior_points(segment).iter().map(|t| t.seconds()).collect();
    let pre: Vec<f64> = preselected.iter().map(|t| t.seconds()).collect();
    let free: Vec<f64> = interior.iter().copied().filter(|c| !pre.contains(c)).collect();
    let want = total_b.min(interior.len()) - pre.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut idx: Vec<usize> = (0..want).collect();
    loop {
        let mut set = pre.clone();
        set.extend(idx.iter().map(|&i| free[i]));
        set.sort_by(f64::total_cmp);
        let r = coverage_radius(&domain, &set);
        if best.as_ref().is_none_or(|(bs, br)| r < *br || (r == *br && set < *bs)) {
            best = Some((set, r));
        }
        // advance to the next `want`-combination of `free`
        let n = free.len();
        let mut k = want;
        while k > 0 && idx[k - 1] == n - want + k - 1 {
            k -= 1;
        }
        if k == 0 {
            break;
        }
        idx[k - 1] += 1;
        for j in k..want {
            idx[j] = idx[j - 1] + 1;
        }
    }
    best.expect("at least one candidate set")
}
