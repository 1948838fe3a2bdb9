//! Named strategies and backend families, selected by configuration.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backends::http::{
    EmbeddingRetriever, HttpClient, HttpPolicy, HttpQueryExtractor, HttpRewardModel,
};
use crate::backends::sim::sim_backends;
use crate::backends::store::{load_instruction, EmbeddingManifest, ManifestFrameStore};
use crate::backends::{Backends, FrameStore, Instruction};
use crate::config::RunConfig;
use crate::engine::Strategies;
use crate::error::{Error, Result};
use crate::expansion::{ExpansionStrategy, SemanticGuided, UniformCoverage};
use crate::model::VideoMeta;
use crate::scoring::{FusionStrategy, IntrinsicOnly, UncertaintyAware};
use crate::simenv::{generate_episode, SyntheticEpisode};

/// Everything needed to run one episode.
pub struct Prepared {
    pub video: VideoMeta,
    pub instruction: Instruction,
    pub backends: Backends,
    /// Ground truth, for simulated episodes.
    pub ground_truth: Option<Arc<SyntheticEpisode>>,
}

pub trait BackendFactory: Send + Sync {
    fn name(&self) -> &'static str;

    fn prepare(&self, config: &RunConfig, seed: u64) -> Result<Prepared>;
}

/// Seeded synthetic episodes with simulated models.
pub struct SimulatedFactory;

impl BackendFactory for SimulatedFactory {
    fn name(&self) -> &'static str {
        "simulated"
    }

    fn prepare(&self, config: &RunConfig, seed: u64) -> Result<Prepared> {
        let episode = Arc::new(generate_episode(seed, &config.episode_params())?);
        Ok(Prepared {
            video: episode.video.clone(),
            instruction: episode.instruction.clone(),
            backends: sim_backends(episode.clone(), config.retry_policy()),
            ground_truth: Some(episode),
        })
    }
}

/// Live OpenAI-compatible endpoints over pre-extracted frames.
pub struct HttpFactory;

impl BackendFactory for HttpFactory {
    fn name(&self) -> &'static str {
        "http"
    }

    fn prepare(&self, config: &RunConfig, _seed: u64) -> Result<Prepared> {
        let need = |p: &Option<std::path::PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("http backend requires {key}")))
        };
        let store = ManifestFrameStore::load(need(&config.frames_manifest, "frames_manifest")?)?;
        let manifest = EmbeddingManifest::load(need(&config.embedding_manifest, "embedding_manifest")?)?;
        let instruction = load_instruction(need(&config.question_file, "question_file")?)?;
        let backend_err = |e| Error::Backend { retries: 0, source: e };
        let chat = Arc::new(HttpClient::new(config.http_profile(false)).map_err(backend_err)?);
        let embed = Arc::new(HttpClient::new(config.http_profile(true)).map_err(backend_err)?);
        let video = store.video().clone();
        let frames: Arc<dyn FrameStore> = Arc::new(store);
        Ok(Prepared {
            video,
            instruction,
            backends: Backends {
                extractor: Arc::new(HttpQueryExtractor {
                    client: chat.clone(),
                    frames: Some(frames.clone()),
                }),
                retriever: Arc::new(EmbeddingRetriever {
                    client: embed,
                    manifest,
                }),
                reward: Arc::new(HttpRewardModel {
                    client: chat.clone(),
                    frames: Some(frames.clone()),
                }),
                policy: Arc::new(HttpPolicy {
                    client: chat,
                    frames: Some(frames),
                }),
                retry: config.retry_policy(),
            },
            ground_truth: None,
        })
    }
}

pub struct Registry {
    expansion: BTreeMap<&'static str, Arc<dyn ExpansionStrategy>>,
    fusion: BTreeMap<&'static str, Arc<dyn FusionStrategy>>,
    backends: BTreeMap<&'static str, Arc<dyn BackendFactory>>,
}

fn lookup<T: ?Sized>(
    map: &BTreeMap<&'static str, Arc<T>>,
    kind: &str,
    name: &str,
) -> Result<Arc<T>> {
    map.get(name).cloned().ok_or_else(|| {
        Error::Config(format!(
            "unknown {kind} `{name}` (known: {})",
            map.keys().copied().collect::<Vec<_>>().join(", ")
        ))
    })
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            expansion: BTreeMap::new(),
            fusion: BTreeMap::new(),
            backends: BTreeMap::new(),
        }
    }

    /// Every built-in strategy and backend family.
    pub fn standard() -> Self {
        let mut r = Registry::empty();
        r.register_expansion(Arc::new(SemanticGuided));
        r.register_expansion(Arc::new(UniformCoverage));
        r.register_fusion(Arc::new(UncertaintyAware));
        r.register_fusion(Arc::new(IntrinsicOnly));
        r.register_backend(Arc::new(SimulatedFactory));
        r.register_backend(Arc::new(HttpFactory));
        r
    }

    pub fn register_expansion(&mut self, s: Arc<dyn ExpansionStrategy>) {
        self.expansion.insert(s.name(), s);
    }

    pub fn register_fusion(&mut self, s: Arc<dyn FusionStrategy>) {
        self.fusion.insert(s.name(), s);
    }

    pub fn register_backend(&mut self, f: Arc<dyn BackendFactory>) {
        self.backends.insert(f.name(), f);
    }

    pub fn expansion(&self, name: &str) -> Result<Arc<dyn ExpansionStrategy>> {
        lookup(&self.expansion, "expansion strategy", name)
    }

    pub fn fusion(&self, name: &str) -> Result<Arc<dyn FusionStrategy>> {
        lookup(&self.fusion, "fusion strategy", name)
    }

    pub fn backend(&self, name: &str) -> Result<Arc<dyn BackendFactory>> {
        lookup(&self.backends, "backend", name)
    }

    pub fn strategies(&self, config: &RunConfig) -> Result<Strategies> {
        Ok(Strategies {
            expansion: self.expansion(&config.expansion)?,
            fusion: self.fusion(&config.fusion)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups_by_name() {
        let r = Registry::standard();
        assert_eq!(r.expansion("uniform").unwrap().name(), "uniform");
        assert_eq!(r.fusion("intrinsic-only").unwrap().name(), "intrinsic-only");
        assert_eq!(r.backend("simulated").unwrap().name(), "simulated");
        let err = r.expansion("random").err().unwrap().to_string();
        assert!(err.contains("semantic-guided"), "{err}");
    }

    #[test]
    fn simulated_factory_is_seeded() {
        let f = SimulatedFactory;
        let c = RunConfig::default();
        let a = f.prepare(&c, 3).unwrap();
        let b = f.prepare(&c, 3).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.video, b.video);
    }

    #[test]
    fn http_factory_names_missing_files() {
        let c = RunConfig {
            backend: "http".into(),
            frames_manifest: Some("/nonexistent/frames.json".into()),
            ..RunConfig::default()
        };
        let err = HttpFactory.prepare(&c, 0).err().unwrap().to_string();
        assert!(err.contains("/nonexistent/frames.json"), "{err}");
    }
}
