//! Paired-seed ablation benchmarks over simulated episodes.
//!
//! Every arm runs the same episode seeds, so per-metric differences between arms
//! come from configuration alone.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::sim::sim_backends;
use crate::config::RunConfig;
use crate::engine::{run_episode_with, EpisodeConfig, Strategies};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::scoring::normalized_entropy;
use crate::simenv::generate_episode;
use crate::trace::{EpisodeTrace, Termination};

pub const HISTOGRAM_BINS: usize = 20;
/// Rounds whose normalised entropy exceeds this count as high-uncertainty.
pub const HIGH_ENTROPY: f64 = 0.8;

/// One benchmark configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub expansion: String,
    pub fusion: String,
    /// Overrides the anchor budget when set.
    pub anchor_frames: Option<usize>,
    pub query_update: bool,
}

impl ArmSpec {
    /// The built-in arms: `full`, `uniform`, `intrinsic-only`, `no-query-update`.
    pub fn named(name: &str) -> Result<Self> {
        let arm = |expansion: &str, fusion: &str, anchor_frames, query_update| ArmSpec {
            name: name.to_string(),
            expansion: expansion.into(),
            fusion: fusion.into(),
            anchor_frames,
            query_update,
        };
        match name {
            "full" => Ok(arm("semantic-guided", "uncertainty-aware", None, true)),
            "uniform" => Ok(arm("uniform", "uncertainty-aware", Some(0), true)),
            "intrinsic-only" => Ok(arm("semantic-guided", "intrinsic-only", None, true)),
            "no-query-update" => Ok(arm("semantic-guided", "uncertainty-aware", None, false)),
            other => Err(Error::Config(format!(
                "unknown arm `{other}` (known: full, uniform, intrinsic-only, no-query-update)"
            ))),
        }
    }

    fn apply(&self, base: &EpisodeConfig) -> EpisodeConfig {
        let mut c = base.clone();
        if let Some(b) = self.anchor_frames {
            c.budget.anchor_frames = b.min(c.budget.total_frames);
        }
        c.query_update = self.query_update;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub evidence: usize,
    pub correct: bool,
    pub answer: Option<String>,
    pub rounds: u32,
    pub frames_observed: usize,
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Counts of per-round normalised entropies in 20 equal bins over [0, 1].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistograms {
    pub intrinsic: Vec<u64>,
    pub fused: Vec<u64>,
    pub rounds: u64,
    pub intrinsic_high: u64,
    pub fused_high: u64,
}

impl EntropyHistograms {
    pub fn intrinsic_high_fraction(&self) -> f64 {
        ratio(self.intrinsic_high, self.rounds)
    }

    pub fn fused_high_fraction(&self) -> f64 {
        ratio(self.fused_high, self.rounds)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn bin_of(entropy: f64) -> usize {
    ((entropy * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Normalised softmax entropy over the intrinsic rewards and, separately, the fused
/// scores of each round's candidate set, both multiplied by `scale` first.
pub fn entropy_histograms(traces: &[&EpisodeTrace], scale: f64) -> EntropyHistograms {
    let mut h = EntropyHistograms::default();
    for round in traces.iter().flat_map(|t| &t.rounds) {
        if round.candidates.is_empty() {
            continue;
        }
        let r: Vec<f64> = round.candidates.iter().map(|c| c.r * scale).collect();
        let f: Vec<f64> = round.candidates.iter().map(|c| c.h * scale).collect();
        let (er, ef) = match (normalized_entropy(&r), normalized_entropy(&f)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => continue,
        };
        if h.rounds == 0 {
            h.intrinsic = vec![0; HISTOGRAM_BINS];
            h.fused = vec![0; HISTOGRAM_BINS];
        }
        h.rounds += 1;
        h.intrinsic[bin_of(er)] += 1;
        h.fused[bin_of(ef)] += 1;
        h.intrinsic_high += u64::from(er > HIGH_ENTROPY);
        h.fused_high += u64::from(ef > HIGH_ENTROPY);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: ArmSpec,
    pub episodes: usize,
    pub errors: usize,
    /// At least one episode failed with an error.
    pub degraded: bool,
    pub success_rate: f64,
    pub mean_frames_observed: f64,
    pub mean_rounds: f64,
    pub entropy: EntropyHistograms,
    /// `resolved_by_round[k]`: episodes answered correctly in round `k + 1`.
    pub resolved_by_round: Vec<usize>,
    pub outcomes: Vec<EpisodeOutcome>,
}

/// Difference `arm - reference` over paired seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub arm: String,
    pub reference: String,
    pub success_rate: f64,
    pub mean_frames_observed: f64,
    pub mean_rounds: f64,
    /// Seeds solved by the arm but not the reference, and vice versa.
    pub wins: usize,
    pub losses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub base_seed: u64,
    pub episodes: usize,
    pub entropy_scale: f64,
    pub arms: Vec<ArmReport>,
    pub deltas: Vec<PairedDelta>,
}

pub struct BenchRun {
    pub report: BenchReport,
    /// Per arm, per episode; `None` where the episode failed.
    pub traces: Vec<Vec<Option<EpisodeTrace>>>,
}

pub fn episode_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

struct Run {
    outcome: EpisodeOutcome,
    trace: Option<EpisodeTrace>,
}

fn run_one(
    config: &RunConfig,
    episode_config: &EpisodeConfig,
    strategies: &Strategies,
    seed: u64,
) -> Run {
    let failed = |error: String, evidence| Run {
        outcome: EpisodeOutcome {
            seed,
            evidence,
            correct: false,
            answer: None,
            rounds: 0,
            frames_observed: 0,
            termination: None,
            error: Some(error),
        },
        trace: None,
    };
    let episode = match generate_episode(seed, &config.episode_params()) {
        Ok(e) => Arc::new(e),
        Err(e) => return failed(e.to_string(), 0),
    };
    let backends = sim_backends(episode.clone(), config.retry_policy());
    let mut ec = episode_config.clone();
    ec.seed = seed;
    match run_episode_with(&episode.video, &episode.instruction, &backends, &ec, strategies) {
        Ok(result) => Run {
            outcome: EpisodeOutcome {
                seed,
                evidence: episode.evidence_frames.len(),
                correct: result.answer == episode.correct_option,
                answer: Some(result.answer),
                rounds: result.rounds_used,
                frames_observed: result.frames_observed,
                termination: Some(result.termination),
                error: None,
            },
            trace: Some(result.trace),
        },
        Err(e) => failed(e.to_string(), episode.evidence_frames.len()),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize(arm: ArmSpec, runs: &[Run], scale: f64) -> ArmReport {
    let outcomes: Vec<EpisodeOutcome> = runs.iter().map(|r| r.outcome.clone()).collect();
    let completed: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let errors = outcomes.len() - completed.len();
    let mut resolved_by_round = Vec::new();
    for o in outcomes.iter().filter(|o| o.correct) {
        let k = o.rounds as usize;
        if resolved_by_round.len() < k {
            resolved_by_round.resize(k, 0);
        }
        resolved_by_round[k - 1] += 1;
    }
    let traces: Vec<&EpisodeTrace> = runs.iter().filter_map(|r| r.trace.as_ref()).collect();
    ArmReport {
        arm,
        episodes: outcomes.len(),
        errors,
        degraded: errors > 0,
        success_rate: ratio(
            outcomes.iter().filter(|o| o.correct).count() as u64,
            outcomes.len() as u64,
        ),
        mean_frames_observed: mean(completed.iter().map(|o| o.frames_observed as f64)),
        mean_rounds: mean(completed.iter().map(|o| o.rounds as f64)),
        entropy: entropy_histograms(&traces, scale),
        resolved_by_round,
        outcomes,
    }
}

fn paired(arm: &ArmReport, reference: &ArmReport) -> PairedDelta {
    let pairs = arm.outcomes.iter().zip(&reference.outcomes);
    PairedDelta {
        arm: arm.arm.name.clone(),
        reference: reference.arm.name.clone(),
        success_rate: arm.success_rate - reference.success_rate,
        mean_frames_observed: arm.mean_frames_observed - reference.mean_frames_observed,
        mean_rounds: arm.mean_rounds - reference.mean_rounds,
        wins: pairs.clone().filter(|(a, b)| a.correct && !b.correct).count(),
        losses: pairs.filter(|(a, b)| !a.correct && b.correct).count(),
    }
}

/// Run every arm over `config.episodes` paired seeds starting at `config.seed`.
pub fn run_bench(registry: &Registry, config: &RunConfig, arms: &[ArmSpec]) -> Result<BenchRun> {
    if config.episodes == 0 {
        return Err(Error::Config("a benchmark needs at least one episode".into()));
    }
    if arms.is_empty() {
        return Err(Error::Config("a benchmark needs at least one arm".into()));
    }
    config.episode_params().validate()?;
    let base = config.episode_config();
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for arm in arms {
        let strategies = Strategies {
            expansion: registry.expansion(&arm.expansion)?,
            fusion: registry.fusion(&arm.fusion)?,
        };
        let ec = arm.apply(&base);
        let runs: Vec<Run> = pool.install(|| {
            (0..config.episodes)
                .into_par_iter()
                .map(|i| run_one(config, &ec, &strategies, episode_seed(config.seed, i)))
                .collect()
        });
        reports.push(summarize(arm.clone(), &runs, config.entropy_scale));
        traces.push(runs.into_iter().map(|r| r.trace).collect());
    }
    let deltas = reports
        .iter()
        .skip(1)
        .map(|a| paired(a, &reports[0]))
        .collect();
    Ok(BenchRun {
        report: BenchReport {
            base_seed: config.seed,
            episodes: config.episodes,
            entropy_scale: config.entropy_scale,
            arms: reports,
            deltas,
        },
        traces,
    })
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Trace(e.to_string()))
    }

    /// Ablation table: one row per arm, deltas against the first arm.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} episodes, base seed {}, entropy scale {}",
            self.episodes, self.base_seed, self.entropy_scale
        );
        let _ = writeln!(
            s,
            "{:<18} {:>8} {:>8} {:>7} {:>8} {:>8} {:>9} {:>9}",
            "arm", "success", "frames", "rounds", "H(r)>.8", "H(h)>.8", "d.success", "d.frames"
        );
        for (i, a) in self.arms.iter().enumerate() {
            let (ds, df) = match i.checked_sub(1).and_then(|j| self.deltas.get(j)) {
                Some(d) => (
                    format!("{:+.3}", d.success_rate),
                    format!("{:+.2}", d.mean_frames_observed),
                ),
                None => ("-".into(), "-".into()),
            };
            let flag = if a.degraded { " (degraded)" } else { "" };
            let _ = writeln!(
                s,
                "{:<18} {:>8.3} {:>8.2} {:>7.2} {:>8.3} {:>8.3} {:>9} {:>9}{flag}",
                a.arm.name,
                a.success_rate,
                a.mean_frames_observed,
                a.mean_rounds,
                a.entropy.intrinsic_high_fraction(),
                a.entropy.fused_high_fraction(),
                ds,
                df
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub requested: usize,
    pub anchor_frames: usize,
    pub success_rate: f64,
    pub mean_frames_observed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub base_seed: u64,
    pub episodes: usize,
    pub total_frames: usize,
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

/// The full arm at each anchor budget in `values`; budgets above the frame budget are
/// clamped to it.
pub fn run_sweep(registry: &Registry, config: &RunConfig, values: &[usize]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut warnings = Vec::new();
    let mut arms = Vec::new();
    for &v in values {
        let clamped = v.min(config.total_frames);
        if clamped != v {
            warnings.push(format!(
                "anchor_frames {v} exceeds total_frames {}; clamped",
                config.total_frames
            ));
        }
        let mut arm = ArmSpec::named("full")?;
        arm.name = format!("anchor_frames={clamped}");
        arm.anchor_frames = Some(clamped);
        arms.push((v, arm));
    }
    let specs: Vec<ArmSpec> = arms.iter().map(|a| a.1.clone()).collect();
    let run = run_bench(registry, config, &specs)?;
    let rows = arms
        .iter()
        .zip(&run.report.arms)
        .map(|((requested, arm), report)| SweepRow {
            requested: *requested,
            anchor_frames: arm.anchor_frames.unwrap_or(0),
            success_rate: report.success_rate,
            mean_frames_observed: report.mean_frames_observed,
        })
        .collect();
    Ok(SweepReport {
        base_seed: config.seed,
        episodes: config.episodes,
        total_frames: config.total_frames,
        rows,
        warnings,
    })
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Trace(e.to_string()))
    }

    /// Success rate as a bar per anchor budget.
    pub fn curve(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "B_s  success  frames");
        for r in &self.rows {
            let bar = "#".repeat((r.success_rate * 40.0).round() as usize);
            let _ = writeln!(
                s,
                "{:>3}  {:>7.3}  {:>6.2}  {bar}",
                r.anchor_frames, r.success_rate, r.mean_frames_observed
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.049), 0);
        assert_eq!(bin_of(0.05), 1);
        assert_eq!(bin_of(1.0), HISTOGRAM_BINS - 1);
    }

    #[test]
    fn empty_traces_give_empty_histograms() {
        let h = entropy_histograms(&[], 100.0);
        assert_eq!(h.rounds, 0);
        assert!(h.intrinsic.is_empty() && h.fused.is_empty());
        assert_eq!(h.intrinsic_high_fraction(), 0.0);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let c = RunConfig {
            episodes: 0,
            ..RunConfig::default()
        };
        assert!(run_bench(&Registry::standard(), &c, &[ArmSpec::named("full").unwrap()]).is_err());
    }

    #[test]
    fn unknown_arm() {
        assert!(ArmSpec::named("full").is_ok());
        assert!(ArmSpec::named("best").is_err());
    }

    #[test]
    fn sweep_clamps() {
        let c = RunConfig {
            episodes: 2,
            total_frames: 4,
            ..RunConfig::default()
        };
        let s = run_sweep(&Registry::standard(), &c, &[3, 7]).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[1].anchor_frames, 4);
        assert_eq!(s.warnings.len(), 1);
    }
}
