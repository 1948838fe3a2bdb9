//! Frame-store and embedding manifests, and question files for live runs.
//!
//! Frame manifest (`frames.json`):
//!
//! ```json
//! {"video_id": "v1", "duration": 120.0,
//!  "frames": [{"t": 0.0, "path": "img/000000.jpg"}, {"t": 1.0, "path": "img/000001.jpg"}]}
//! ```
//!
//! Paths are relative to the manifest's directory. The listed timestamps form the
//! video's frame grid.
//!
//! Embedding manifest:
//!
//! ```json
//! {"video_id": "v1", "frames": [{"t": 0.0, "embedding": [0.1, 0.2]}]}
//! ```
//!
//! Question file: `{"question": "...", "options": ["...", "..."]}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{FrameStore, Instruction};
use crate::error::{Error, Result};
use crate::model::{Timestamp, VideoMeta};

#[derive(Deserialize)]
struct FrameManifestFile {
    video_id: String,
    duration: f64,
    frames: Vec<FrameEntry>,
}

#[derive(Deserialize)]
struct FrameEntry {
    t: f64,
    path: PathBuf,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Frame images on disk, keyed by timestamp.
#[derive(Clone, Debug)]
pub struct ManifestFrameStore {
    video: VideoMeta,
    frames: BTreeMap<Timestamp, PathBuf>,
}

impl ManifestFrameStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: FrameManifestFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut frames = BTreeMap::new();
        for f in &file.frames {
            frames.insert(Timestamp::new(f.t)?, base.join(&f.path));
        }
        let grid: Vec<f64> = frames.keys().map(|t| t.seconds()).collect();
        let video = VideoMeta::new(file.video_id, file.duration, grid)?;
        Ok(ManifestFrameStore { video, frames })
    }

    pub fn video(&self) -> &VideoMeta {
        &self.video
    }
}

impl FrameStore for ManifestFrameStore {
    fn frame_path(&self, t: Timestamp) -> Option<PathBuf> {
        self.frames.get(&t).cloned()
    }
}

#[derive(Deserialize)]
struct EmbeddingManifestFile {
    video_id: String,
    frames: Vec<EmbeddingEntry>,
}

#[derive(Deserialize)]
struct EmbeddingEntry {
    t: f64,
    embedding: Vec<f32>,
}

/// Precomputed per-frame embeddings for linear-scan retrieval.
#[derive(Clone, Debug)]
pub struct EmbeddingManifest {
    pub video_id: String,
    pub frames: Vec<(Timestamp, Vec<f32>)>,
}

impl EmbeddingManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: EmbeddingManifestFile = read_json(path)?;
        let dim = file.frames.first().map_or(0, |f| f.embedding.len());
        if file.frames.iter().any(|f| f.embedding.len() != dim || dim == 0) {
            return Err(Error::Config(format!(
                "{}: embeddings must be non-empty and share one dimension",
                path.display()
            )));
        }
        let frames = file
            .frames
            .into_iter()
            .map(|f| Ok((Timestamp::new(f.t)?, f.embedding)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingManifest {
            video_id: file.video_id,
            frames,
        })
    }
}

#[derive(Deserialize)]
struct QuestionFile {
    question: String,
    options: Vec<String>,
}

pub fn load_instruction(path: impl AsRef<Path>) -> Result<Instruction> {
    let file: QuestionFile = read_json(path.as_ref())?;
    if file.options.is_empty() {
        return Err(Error::Config(format!(
            "{}: question has no options",
            path.as_ref().display()
        )));
    }
    let options: Vec<&str> = file.options.iter().map(String::as_str).collect();
    Ok(Instruction::new(file.question, &options))
}
