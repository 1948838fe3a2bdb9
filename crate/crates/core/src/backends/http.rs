//! Live clients for OpenAI-compatible endpoints.
//!
//! Chat: `POST {endpoint}/chat/completions`
//!
//! ```json
//! {"model": "<model>", "temperature": 0.5,
//!  "messages": [{"role": "user", "content": [
//!    {"type": "text", "text": "<prompt>"},
//!    {"type": "text", "text": "Frame at 30s:"},
//!    {"type": "image_url", "image_url": {"url": "data:image/jpeg;base64,..."}}]}]}
//! ```
//!
//! and the reply text is read from `choices[0].message.content`.
//!
//! Embeddings: `POST {endpoint}/embeddings` with `{"model": "<model>", "input": ["<text>"]}`;
//! the vector is `data[0].embedding`.
//!
//! The bearer token, if any, comes from the environment variable named in the profile.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::parse::{parse_queries, parse_reward};
use super::prompts::{
    fmt_time, query_generation_prompt, query_update_prompt, reward_prompt, selection_prompt,
};
use super::store::EmbeddingManifest;
use super::{
    ClipHit, ClipRetriever, FrameStore, Instruction, PolicyModel, PolicyRequest, QueryExtractor,
    QueryUpdateRequest, RewardRequest, RewardResponse, SegmentRewardModel,
};
use crate::error::BackendError;
use crate::model::Timestamp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpProfile {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Name of the environment variable holding the API token.
    pub api_key_env: Option<String>,
}

pub struct HttpClient {
    agent: ureq::Agent,
    profile: HttpProfile,
    token: Option<String>,
}

impl HttpClient {
    pub fn new(profile: HttpProfile) -> Result<Self, BackendError> {
        if profile.endpoint.trim().is_empty() {
            return Err(BackendError::Config("http backend requires an endpoint".into()));
        }
        if profile.model.trim().is_empty() {
            return Err(BackendError::Config("http backend requires a model name".into()));
        }
        let token = match &profile.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(profile.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient {
            agent,
            profile,
            token,
        })
    }

    pub fn profile(&self) -> &HttpProfile {
        &self.profile
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.profile.endpoint.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| self.transport(e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport(e))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status {
                status,
                body: text.chars().take(200).collect(),
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Malformed(format!("response is not JSON: {e}")))
    }

    fn transport(&self, e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(self.profile.timeout),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                BackendError::Timeout(self.profile.timeout)
            }
            other => BackendError::Transport(other.to_string()),
        }
    }

    /// One user turn: the prompt, then each image preceded by its caption.
    pub fn chat(&self, prompt: &str, images: &[(String, Vec<u8>)]) -> Result<String, BackendError> {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        for (caption, bytes) in images {
            content.push(json!({"type": "text", "text": caption}));
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/jpeg;base64,{data}")}
            }));
        }
        let body = json!({
            "model": self.profile.model,
            "temperature": self.profile.temperature,
            "messages": [{"role": "user", "content": content}],
        });
        let reply = self.post("chat/completions", &body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("no choices[0].message.content".into()))
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        let body = json!({"model": self.profile.model, "input": [text]});
        let reply = self.post("embeddings", &body)?;
        let vector = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Malformed("no data[0].embedding".into()))?;
        vector
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| BackendError::Malformed("embedding has non-numeric entries".into()))
    }
}

/// Images for `frames`, captioned with their timestamps. Missing frames are a
/// configuration error: live runs need every sampled grid point on disk.
fn load_frames(
    store: Option<&dyn FrameStore>,
    frames: &[Timestamp],
) -> Result<Vec<(String, Vec<u8>)>, BackendError> {
    let Some(store) = store else {
        return Ok(Vec::new());
    };
    frames
        .iter()
        .map(|&t| {
            let path = store
                .frame_path(t)
                .ok_or_else(|| BackendError::Config(format!("no frame image for t={t}")))?;
            let bytes = read_image(&path)?;
            Ok((format!("Frame at {}s:", fmt_time(t)), bytes))
        })
        .collect()
}

fn read_image(path: &Path) -> Result<Vec<u8>, BackendError> {
    std::fs::read(path)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
}

pub struct HttpQueryExtractor {
    pub client: Arc<HttpClient>,
    pub frames: Option<Arc<dyn FrameStore>>,
}

impl QueryExtractor for HttpQueryExtractor {
    fn discover(&self, instruction: &Instruction) -> Result<Vec<String>, BackendError> {
        let prompt = query_generation_prompt(instruction)?;
        parse_queries(&self.client.chat(&prompt, &[])?)
    }

    fn update(&self, req: &QueryUpdateRequest<'_>) -> Result<Vec<String>, BackendError> {
        let prompt = query_update_prompt(req.instruction, req.frames, req.history)?;
        let images = load_frames(self.frames.as_deref(), req.frames)?;
        parse_queries(&self.client.chat(&prompt, &images)?)
    }
}

pub struct HttpRewardModel {
    pub client: Arc<HttpClient>,
    pub frames: Option<Arc<dyn FrameStore>>,
}

impl SegmentRewardModel for HttpRewardModel {
    fn evaluate(&self, req: &RewardRequest<'_>) -> Result<RewardResponse, BackendError> {
        let prompt = reward_prompt(req)?;
        let mut shown = vec![req.parent_interval.start];
        shown.extend_from_slice(req.frames);
        shown.push(req.parent_interval.end);
        shown.retain(|t| *t <= req.video.duration());
        shown.dedup();
        let images = load_frames(self.frames.as_deref(), &shown)?;
        parse_reward(&self.client.chat(&prompt, &images)?, req.segments.len())
    }
}

pub struct HttpPolicy {
    pub client: Arc<HttpClient>,
    pub frames: Option<Arc<dyn FrameStore>>,
}

impl PolicyModel for HttpPolicy {
    fn decide(&self, req: &PolicyRequest<'_>) -> Result<String, BackendError> {
        let prompt = selection_prompt(req)?;
        let images = load_frames(self.frames.as_deref(), req.memory)?;
        self.client.chat(&prompt, &images)
    }
}

/// Linear-scan retriever over precomputed frame embeddings; the query is embedded
/// remotely. Cosine similarity is mapped to [0, 1] by `(cos + 1) / 2`.
pub struct EmbeddingRetriever {
    pub client: Arc<HttpClient>,
    pub manifest: EmbeddingManifest,
}

pub fn cosine_to_unit(cos: f64) -> f64 {
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl ClipRetriever for EmbeddingRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<ClipHit>, BackendError> {
        let q = self.client.embed(query)?;
        let dim = self.manifest.frames.first().map_or(0, |f| f.1.len());
        if q.len() != dim {
            return Err(BackendError::Malformed(format!(
                "query embedding has dimension {}, manifest has {dim}",
                q.len()
            )));
        }
        let mut hits: Vec<ClipHit> = self
            .manifest
            .frames
            .iter()
            .map(|(t, e)| ClipHit {
                peak_time: *t,
                similarity: cosine_to_unit(cosine(&q, e)),
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
