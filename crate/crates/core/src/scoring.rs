//! Query score pooling, reward entropy, and uncertainty-aware fusion.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::model::{NodeId, SegmentInterval, Timestamp};

/// Scale at which the reward model reports scores (integer percentages).
pub const RUBRIC_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub node: NodeId,
    pub intrinsic: f64,
    pub query: f64,
    pub fused: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionContext {
    pub tau_c: f64,
    pub candidate_count: usize,
    /// Normalised entropy of the intrinsic-reward distribution.
    pub entropy: f64,
    pub probabilities: Vec<f64>,
}

impl FusionContext {
    /// `(1 - H, H)`: the weights given to intrinsic reward and query score.
    pub fn weights(&self) -> (f64, f64) {
        (1.0 - self.entropy, self.entropy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub node: NodeId,
    pub intrinsic: f64,
    pub query: f64,
}

/// Log-mean-exp pooling of similarities at temperature `tau_c`. Empty input scores 0.
pub fn log_mean_exp(similarities: &[f64], tau_c: f64) -> Result<f64> {
    if !(tau_c > 0.0) || !tau_c.is_finite() {
        return Err(Error::rejected(format!("tau_c must be positive, got {tau_c}")));
    }
    if similarities.is_empty() {
        return Ok(0.0);
    }
    let n = similarities.len() as f64;
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = similarities.iter().sum::<f64>() / n;
    let sum: f64 = similarities
        .iter()
        .map(|phi| ((phi - max) / tau_c).exp())
        .sum();
    let pooled = max + tau_c * (sum / n).ln();
    // exact bounds of log-mean-exp; rounding can leave them by an ulp
    Ok(pooled.clamp(mean.min(max), max))
}

/// `u(s)`: pooled similarity of the anchors falling inside `segment`.
pub fn query_score(
    segment: &SegmentInterval,
    anchors: &AnchorSet,
    tau_c: f64,
    video_end: Timestamp,
) -> Result<f64> {
    let sims: Vec<f64> = anchors
        .anchors_in(segment, video_end)
        .map(|a| a.similarity)
        .collect();
    log_mean_exp(&sims, tau_c)
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Shannon entropy of `softmax(values)` divided by `ln N`.
///
/// One candidate has entropy 0; identical values have entropy exactly 1.
pub fn normalized_entropy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::rejected("entropy of an empty reward set"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::rejected("rewards must be finite"));
    }
    if values.len() == 1 {
        return Ok(0.0);
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok(1.0);
    }
    let probs = softmax(values);
    let h: f64 = probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok((h / (values.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Fuse every candidate's intrinsic reward with its query score, weighting by the
/// uncertainty of the intrinsic-reward distribution.
///
/// The entropy is taken over `intrinsic * entropy_scale`, i.e. the scale on which the
/// reward model emitted its scores.
pub fn fuse(
    candidates: &[Candidate],
    tau_c: f64,
    entropy_scale: f64,
) -> Result<(Vec<ScoreBundle>, FusionContext)> {
    validate(candidates)?;
    if !(entropy_scale > 0.0) {
        return Err(Error::rejected("entropy scale must be positive"));
    }
    let scaled: Vec<f64> = candidates.iter().map(|c| c.intrinsic * entropy_scale).collect();
    let entropy = normalized_entropy(&scaled)?;
    let bundles = candidates
        .iter()
        .map(|c| ScoreBundle {
            node: c.node,
            intrinsic: c.intrinsic,
            query: c.query,
            fused: convex(c.intrinsic, c.query, entropy),
        })
        .collect();
    Ok((
        bundles,
        FusionContext {
            tau_c,
            candidate_count: candidates.len(),
            entropy,
            probabilities: softmax(&scaled),
        },
    ))
}

/// How candidate scores are combined into the fused score used for selection.
pub trait FusionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn fuse(
        &self,
        candidates: &[Candidate],
        tau_c: f64,
        entropy_scale: f64,
    ) -> Result<(Vec<ScoreBundle>, FusionContext)>;
}

/// Entropy-weighted blend of intrinsic reward and query score.
#[derive(Clone, Copy, Debug, Default)]
pub struct UncertaintyAware;

impl FusionStrategy for UncertaintyAware {
    fn name(&self) -> &'static str {
        "uncertainty-aware"
    }

    fn fuse(
        &self,
        candidates: &[Candidate],
        tau_c: f64,
        entropy_scale: f64,
    ) -> Result<(Vec<ScoreBundle>, FusionContext)> {
        fuse(candidates, tau_c, entropy_scale)
    }
}

/// `h = r`. The entropy is still computed so traces stay comparable.
#[derive(Clone, Copy, Debug, Default)]
pub struct IntrinsicOnly;

impl FusionStrategy for IntrinsicOnly {
    fn name(&self) -> &'static str {
        "intrinsic-only"
    }

    fn fuse(
        &self,
        candidates: &[Candidate],
        tau_c: f64,
        entropy_scale: f64,
    ) -> Result<(Vec<ScoreBundle>, FusionContext)> {
        let (mut bundles, ctx) = fuse(candidates, tau_c, entropy_scale)?;
        for b in &mut bundles {
            b.fused = b.intrinsic;
        }
        Ok((bundles, ctx))
    }
}

/// `(1 - w) * r + w * u`, kept inside `[min(r, u), max(r, u)]`.
pub fn convex(r: f64, u: f64, w: f64) -> f64 {
    if w == 0.0 {
        return r;
    }
    if w == 1.0 {
        return u;
    }
    ((1.0 - w) * r + w * u).clamp(r.min(u), r.max(u))
}

fn validate(candidates: &[Candidate]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::rejected("fusion needs at least one candidate"));
    }
    for c in candidates {
        if !(0.0..=1.0).contains(&c.intrinsic) || !(0.0..=1.0).contains(&c.query) {
            return Err(Error::rejected(format!(
                "candidate {} has scores outside [0, 1] (r={}, u={})",
                c.node, c.intrinsic, c.query
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedReward {
    pub value: f64,
    pub warning: Option<String>,
}

/// Map a 0..=100 rubric score onto [0, 1], clamping overflow.
pub fn normalize_intrinsic(raw: i64) -> NormalizedReward {
    let clamped = raw.clamp(0, 100);
    NormalizedReward {
        value: clamped as f64 / RUBRIC_SCALE,
        warning: (clamped != raw)
            .then(|| format!("reward score {raw} outside 0..=100, clamped to {clamped}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(node: NodeId, r: f64, u: f64) -> Candidate {
        Candidate {
            node,
            intrinsic: r,
            query: u,
        }
    }

    #[test]
    fn constant_similarities_pool_to_themselves() {
        for tau in [1e-3, 0.1, 1.0, 1e3] {
            assert_eq!(log_mean_exp(&[0.5, 0.5], tau).unwrap(), 0.5);
        }
    }

    #[test]
    fn pooled_pair_matches_closed_form() {
        // 0.1 * ln((e^10 + 1) / 2), evaluated at 50 digits
        let expected = 0.930_689_821_833_927_2;
        let got = log_mean_exp(&[1.0, 0.0], 0.1).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got}");
    }

    #[test]
    fn empty_anchor_set_scores_zero() {
        assert_eq!(log_mean_exp(&[], 0.1).unwrap(), 0.0);
        assert!(log_mean_exp(&[0.3], 0.0).is_err());
        assert!(log_mean_exp(&[0.3], -1.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(normalized_entropy(&[0.4, 0.4, 0.4]).unwrap(), 1.0);
        assert_eq!(normalized_entropy(&[0.7]).unwrap(), 0.0);
        assert!(normalized_entropy(&[]).is_err());
        // p = softmax(0.9, 0.1); -(sum p ln p) / ln 2
        let h = normalized_entropy(&[0.9, 0.1]).unwrap();
        assert!((h - 0.893_202_913_334_427_7).abs() < 1e-12, "{h}");
    }

    #[test]
    fn fusion_limits() {
        let (single, ctx) = fuse(&[cand(1, 0.3, 0.9)], 0.1, RUBRIC_SCALE).unwrap();
        assert_eq!(ctx.entropy, 0.0);
        assert_eq!(single[0].fused, 0.3);

        let (flat, ctx) = fuse(
            &[cand(1, 0.4, 0.1), cand(2, 0.4, 0.8), cand(3, 0.4, 0.0)],
            0.1,
            RUBRIC_SCALE,
        )
        .unwrap();
        assert_eq!(ctx.entropy, 1.0);
        assert_eq!(ctx.weights(), (0.0, 1.0));
        for b in flat {
            assert_eq!(b.fused, b.query);
        }
        assert!((convex(0.6, 0.8, 0.5) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn fusion_rejects_out_of_range_scores() {
        assert!(fuse(&[cand(1, 1.2, 0.0)], 0.1, 1.0).is_err());
        assert!(fuse(&[], 0.1, 1.0).is_err());
    }

    #[test]
    fn rubric_normalisation() {
        assert_eq!(normalize_intrinsic(100).value, 1.0);
        assert_eq!(normalize_intrinsic(0).value, 0.0);
        let over = normalize_intrinsic(150);
        assert_eq!(over.value, 1.0);
        assert!(over.warning.is_some());
        assert!(normalize_intrinsic(-3).warning.is_some());
        assert!(normalize_intrinsic(42).warning.is_none());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    /// Entropy recomputed directly from the formula, summing in reverse order.
    fn entropy_oracle(values: &[f64]) -> f64 {
        let n = values.len();
        if n == 1 {
            return 0.0;
        }
        let z: f64 = values.iter().rev().map(|v| v.exp()).sum();
        let mut acc = 0.0;
        for v in values.iter().rev() {
            let p = v.exp() / z;
            acc += p * p.ln();
        }
        -acc / (n as f64).ln()
    }

    #[test]
    fn entropy_matches_oracle_on_grid() {
        // every vector of length <= 4 on the 0.1 grid, plus sampled length 5..6
        fn walk(prefix: &mut Vec<f64>, depth: usize) {
            if !prefix.is_empty() {
                let got = normalized_entropy(prefix).unwrap();
                assert!((got - entropy_oracle(prefix)).abs() < 1e-12, "{prefix:?}");
            }
            if depth == 0 {
                return;
            }
            for k in 0..=10 {
                prefix.push(k as f64 / 10.0);
                walk(prefix, depth - 1);
                prefix.pop();
            }
        }
        walk(&mut Vec::new(), 4);
    }

    proptest! {
        #[test]
        fn entropy_matches_oracle_long(v in proptest::collection::vec(0u8..=10, 5..=6)) {
            let values: Vec<f64> = v.iter().map(|k| *k as f64 / 10.0).collect();
            prop_assert!((normalized_entropy(&values).unwrap() - entropy_oracle(&values)).abs() < 1e-12);
        }

        #[test]
        fn pooling_lies_between_mean_and_max(
            sims in proptest::collection::vec(0.0f64..=1.0, 1..12),
            tau in 1e-3f64..10.0,
        ) {
            let u = log_mean_exp(&sims, tau).unwrap();
            let mean = sims.iter().sum::<f64>() / sims.len() as f64;
            let max = sims.iter().copied().fold(0.0, f64::max);
            prop_assert!(mean <= u && u <= max);
        }

        #[test]
        fn pooling_is_monotone(
            sims in proptest::collection::vec(0.0f64..=0.9, 1..8),
            idx in 0usize..8,
            bump in 0.0f64..0.1,
        ) {
            let idx = idx % sims.len();
            let mut raised = sims.clone();
            raised[idx] += bump;
            prop_assert!(log_mean_exp(&raised, 0.1).unwrap() >= log_mean_exp(&sims, 0.1).unwrap() - 1e-12);
        }

        #[test]
        fn fused_is_convex_combination(
            pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..10),
        ) {
            let cands: Vec<Candidate> = pairs
                .iter()
                .enumerate()
                .map(|(i, (r, u))| Candidate { node: i, intrinsic: *r, query: *u })
                .collect();
            let (bundles, ctx) = fuse(&cands, 0.1, RUBRIC_SCALE).unwrap();
            prop_assert!((0.0..=1.0).contains(&ctx.entropy));
            prop_assert!((ctx.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for b in bundles {
                prop_assert!(b.intrinsic.min(b.query) <= b.fused && b.fused <= b.intrinsic.max(b.query));
            }
        }
    }
}
