//! Run configuration: one flat TOML table, layered as
//! built-in defaults, then a config file, then `key=value` overrides.
//!
//! ```toml
//! seed = 7
//! total_frames = 6
//! anchor_frames = 3
//! backend = "http"
//! endpoint = "http://localhost:8000/v1"
//! model_name = "my-vlm"
//! api_key_env = "LONGSHOT_API_KEY"   # the token itself never goes in this file
//! ```
//!
//! Every key of [`RunConfig`] may appear; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::http::HttpProfile;
use crate::backends::RetryPolicy;
use crate::engine::EpisodeConfig;
use crate::error::{Error, Result};
use crate::expansion::ExpansionBudget;
use crate::simenv::EpisodeParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // episode
    pub total_frames: usize,
    pub anchor_frames: usize,
    pub tau_c: f64,
    pub memory_capacity: usize,
    pub retrieval_top_k: usize,
    pub clip_width: f64,
    pub max_rounds: u32,
    pub max_total_frames: usize,
    pub entropy_scale: f64,
    pub seed: u64,
    pub query_update: bool,
    pub timing: bool,
    pub expansion: String,
    pub fusion: String,

    // backend profile
    pub backend: String,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Model used for query embeddings; defaults to `model_name`.
    pub embedding_model: Option<String>,
    pub request_temperature: f64,
    /// Per-request timeout, in seconds.
    pub timeout: f64,
    pub retry_budget: u32,
    /// Name of the environment variable holding the API token.
    pub api_key_env: Option<String>,

    // live inputs
    pub frames_manifest: Option<PathBuf>,
    pub embedding_manifest: Option<PathBuf>,
    pub question_file: Option<PathBuf>,

    // synthetic episodes
    pub min_duration: f64,
    pub max_duration: f64,
    pub grid_step: f64,
    pub min_evidence: usize,
    pub max_evidence: usize,
    pub tightness: f64,
    pub reward_noise_sigma: f64,
    pub similarity_noise_sigma: f64,
    pub answer_threshold: Option<usize>,
    pub evidence_halfwidth: f64,
    pub evidence_relevance: f64,
    pub relevance_width: f64,
    pub reveal_radius: f64,
    pub option_count: usize,

    // benchmarking
    pub episodes: usize,
    /// Parallel episodes; 0 lets the thread pool decide.
    pub workers: usize,
    pub arms: Vec<String>,
}

pub const DEFAULT_BENCH_SEED: u64 = 20_240_917;

impl Default for RunConfig {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        let p = EpisodeParams::default();
        RunConfig {
            total_frames: e.budget.total_frames,
            anchor_frames: e.budget.anchor_frames,
            tau_c: e.tau_c,
            memory_capacity: e.memory_capacity,
            retrieval_top_k: e.retrieval_top_k,
            clip_width: e.clip_width,
            max_rounds: e.max_rounds,
            max_total_frames: e.max_total_frames,
            entropy_scale: e.entropy_scale,
            seed: DEFAULT_BENCH_SEED,
            query_update: e.query_update,
            timing: e.timing,
            expansion: "semantic-guided".into(),
            fusion: "uncertainty-aware".into(),
            backend: "simulated".into(),
            endpoint: None,
            model_name: None,
            embedding_model: None,
            request_temperature: 0.5,
            timeout: 60.0,
            retry_budget: 2,
            api_key_env: None,
            frames_manifest: None,
            embedding_manifest: None,
            question_file: None,
            min_duration: p.min_duration,
            max_duration: p.max_duration,
            grid_step: p.grid_step,
            min_evidence: p.min_evidence,
            max_evidence: p.max_evidence,
            tightness: p.tightness,
            reward_noise_sigma: p.reward_noise_sigma,
            similarity_noise_sigma: p.similarity_noise_sigma,
            answer_threshold: p.answer_threshold,
            evidence_halfwidth: p.evidence_halfwidth,
            evidence_relevance: p.evidence_relevance,
            relevance_width: p.relevance_width,
            reveal_radius: p.reveal_radius,
            option_count: p.option_count,
            episodes: 200,
            workers: 0,
            arms: ["full", "uniform", "intrinsic-only", "no-query-update"]
                .map(String::from)
                .to_vec(),
        }
    }
}

fn config_err(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

/// Parse the right-hand side of `key=value` as a TOML value, falling back to a bare
/// string so that `--set backend=http` needs no quotes.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Defaults, overlaid with `file` (if any), overlaid with `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(config_err)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let layer: toml::Table = text
                .parse()
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            table.extend(layer);
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{item}` is not key=value")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let config: RunConfig = table.try_into().map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.episode_config().validate()?;
        self.episode_params().validate().map_err(|e| config_err(e.to_string()))?;
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(config_err("timeout must be positive"));
        }
        if self.backend == "http" {
            let missing: Vec<&str> = [
                ("endpoint", self.endpoint.is_none()),
                ("model_name", self.model_name.is_none()),
                ("frames_manifest", self.frames_manifest.is_none()),
                ("embedding_manifest", self.embedding_manifest.is_none()),
                ("question_file", self.question_file.is_none()),
            ]
            .into_iter()
            .filter(|(_, m)| *m)
            .map(|(k, _)| k)
            .collect();
            if !missing.is_empty() {
                return Err(config_err(format!(
                    "http backend requires {}",
                    missing.join(", ")
                )));
            }
        } else if self.frames_manifest.is_some() || self.question_file.is_some() {
            return Err(config_err(
                "manifest and question inputs are only used by the http backend; \
                 simulated runs generate their own episodes",
            ));
        }
        Ok(())
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            budget: ExpansionBudget {
                total_frames: self.total_frames,
                anchor_frames: self.anchor_frames,
            },
            tau_c: self.tau_c,
            memory_capacity: self.memory_capacity,
            retrieval_top_k: self.retrieval_top_k,
            clip_width: self.clip_width,
            max_rounds: self.max_rounds,
            max_total_frames: self.max_total_frames,
            entropy_scale: self.entropy_scale,
            seed: self.seed,
            query_update: self.query_update,
            timing: self.timing,
        }
    }

    pub fn episode_params(&self) -> EpisodeParams {
        EpisodeParams {
            min_duration: self.min_duration,
            max_duration: self.max_duration,
            grid_step: self.grid_step,
            min_evidence: self.min_evidence,
            max_evidence: self.max_evidence,
            tightness: self.tightness,
            reward_noise_sigma: self.reward_noise_sigma,
            similarity_noise_sigma: self.similarity_noise_sigma,
            answer_threshold: self.answer_threshold,
            evidence_halfwidth: self.evidence_halfwidth,
            evidence_relevance: self.evidence_relevance,
            relevance_width: self.relevance_width,
            reveal_radius: self.reveal_radius,
            option_count: self.option_count,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        if self.backend == "http" {
            RetryPolicy::live(self.retry_budget)
        } else {
            RetryPolicy {
                retries: self.retry_budget,
                base_delay: Duration::ZERO,
            }
        }
    }

    pub fn http_profile(&self, embedding: bool) -> HttpProfile {
        let model = if embedding {
            self.embedding_model.clone().or_else(|| self.model_name.clone())
        } else {
            self.model_name.clone()
        };
        HttpProfile {
            endpoint: self.endpoint.clone().unwrap_or_default(),
            model: model.unwrap_or_default(),
            temperature: self.request_temperature,
            timeout: Duration::from_secs_f64(self.timeout),
            api_key_env: self.api_key_env.clone(),
        }
    }
}
