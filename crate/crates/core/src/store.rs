//! On-disk episodic datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! episodes/<id>/frames/00000.png ...
//! episodes/<id>/actions.json
//! ```
//!
//! `manifest.json` keys appear in the order `version, name, action_dim,
//! image_size, episodes`; episodes are sorted by id. Saving the same
//! in-memory dataset twice produces identical bytes.
//!
//! Writers need exclusive ownership of the target directory. Nothing here
//! arbitrates between concurrent writers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::prompting::PromptTriple;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported manifest version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("episode {episode_id}: manifest declares {declared} frames but found {frames} images and {actions} actions")]
    LengthMismatch {
        episode_id: String,
        declared: usize,
        frames: usize,
        actions: usize,
    },
    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("dataset failed validation: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, so `-0.0 != 0.0` and NaN payloads compare exactly.
    pub fn bit_eq(&self, other: &ActionVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: RgbImage,
    pub action: ActionVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "lowercase")]
pub enum Provenance {
    Collected,
    Augmented {
        source_episode_id: String,
        prompt_triple: PromptTriple,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub instruction: String,
    pub frames: Vec<Frame>,
    pub provenance: Provenance,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionVector> {
        self.frames.iter().map(|f| &f.action)
    }

    /// Observation following frame `i`, i.e. `o_{i+1}`; `None` for the last frame.
    pub fn next_observation(&self, i: usize) -> Option<&RgbImage> {
        self.frames.get(i + 1).map(|f| &f.image)
    }
}

/// `(H, W)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub height: u32,
    pub width: u32,
}

impl From<[u32; 2]> for ImageSize {
    fn from(a: [u32; 2]) -> Self {
        Self {
            height: a[0],
            width: a[1],
        }
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.height, s.width]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDescriptor {
    pub id: String,
    pub instruction: String,
    pub length: usize,
    pub frames_path: String,
    pub actions_path: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub action_dim: usize,
    pub image_size: ImageSize,
    pub episodes: Vec<EpisodeDescriptor>,
}

/// A manifest together with its episode payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub action_dim: usize,
    pub image_size: ImageSize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, action_dim: usize, image_size: ImageSize) -> Self {
        Self {
            name: name.into(),
            action_dim,
            image_size,
            episodes: Vec::new(),
        }
    }

    pub fn sort_episodes(&mut self) {
        self.episodes.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn episode(&self, id: &str) -> Option<&Episode> {
        self.episodes.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.episodes.iter().map(|e| e.id.clone()).collect()
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut episodes: Vec<EpisodeDescriptor> = self
            .episodes
            .iter()
            .map(|e| EpisodeDescriptor {
                id: e.id.clone(),
                instruction: e.instruction.clone(),
                length: e.frames.len(),
                frames_path: format!("episodes/{}/frames", e.id),
                actions_path: format!("episodes/{}/actions.json", e.id),
                provenance: e.provenance.clone(),
            })
            .collect();
        episodes.sort_by(|a, b| a.id.cmp(&b.id));
        DatasetManifest {
            version: MANIFEST_VERSION,
            name: self.name.clone(),
            action_dim: self.action_dim,
            image_size: self.image_size,
            episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateId,
    InvalidId,
    EmptyInstruction,
    NoFrames,
    ActionDim { frame: usize, expected: usize, found: usize },
    NonFiniteAction { frame: usize },
    ImageSize { frame: usize, expected: (u32, u32), found: (u32, u32) },
    DanglingProvenance { source_episode_id: String },
    InvalidPromptTriple,
    NonPositiveActionDim,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::DuplicateId => write!(f, "episode ids must be unique"),
            ViolationKind::InvalidId => write!(f, "episode id must be a nonempty path-safe name"),
            ViolationKind::EmptyInstruction => write!(f, "instruction must be nonempty"),
            ViolationKind::NoFrames => write!(f, "episode must have at least one frame"),
            ViolationKind::ActionDim { frame, expected, found } => {
                write!(f, "frame {frame}: action has {found} values, expected {expected}")
            }
            ViolationKind::NonFiniteAction { frame } => write!(f, "frame {frame}: action contains a non-finite value"),
            ViolationKind::ImageSize { frame, expected, found } => write!(
                f,
                "frame {frame}: image is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            ViolationKind::DanglingProvenance { source_episode_id } => {
                write!(f, "augmented from unknown episode {source_episode_id}")
            }
            ViolationKind::InvalidPromptTriple => write!(f, "provenance prompt triple is incomplete"),
            ViolationKind::NonPositiveActionDim => write!(f, "action_dim must be positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for dataset-level violations.
    pub episode_id: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.episode_id {
            Some(id) => write!(f, "episode {id}: {}", self.kind),
            None => write!(f, "dataset: {}", self.kind),
        }
    }
}

fn is_path_safe(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Check every dataset and episode invariant. Augmented provenance is not
/// resolved here; see [`validate_provenance`].
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if dataset.action_dim == 0 {
        out.push(Violation {
            episode_id: None,
            kind: ViolationKind::NonPositiveActionDim,
        });
    }
    let expected = (dataset.image_size.height, dataset.image_size.width);
    let mut seen = HashSet::new();
    for ep in &dataset.episodes {
        let mut push = |kind| {
            out.push(Violation {
                episode_id: Some(ep.id.clone()),
                kind,
            })
        };
        if !seen.insert(ep.id.as_str()) {
            push(ViolationKind::DuplicateId);
        }
        if !is_path_safe(&ep.id) {
            push(ViolationKind::InvalidId);
        }
        if ep.instruction.trim().is_empty() {
            push(ViolationKind::EmptyInstruction);
        }
        if ep.frames.is_empty() {
            push(ViolationKind::NoFrames);
        }
        if let Provenance::Augmented { prompt_triple, .. } = &ep.provenance {
            if prompt_triple.validate().is_err() {
                push(ViolationKind::InvalidPromptTriple);
            }
        }
        for (i, frame) in ep.frames.iter().enumerate() {
            if frame.action.len() != dataset.action_dim {
                push(ViolationKind::ActionDim {
                    frame: i,
                    expected: dataset.action_dim,
                    found: frame.action.len(),
                });
            }
            if !frame.action.is_finite() {
                push(ViolationKind::NonFiniteAction { frame: i });
            }
            let found = (frame.image.height(), frame.image.width());
            if found != expected {
                push(ViolationKind::ImageSize { frame: i, expected, found });
            }
        }
    }
    out
}

/// Resolve every augmented episode's source id against `known` ids (the
/// co-loaded original dataset, plus the dataset itself).
pub fn validate_provenance<'a>(dataset: &Dataset, known: impl IntoIterator<Item = &'a str>) -> Vec<Violation> {
    let mut ids: HashSet<&str> = known.into_iter().collect();
    ids.extend(dataset.episodes.iter().map(|e| e.id.as_str()));
    dataset
        .episodes
        .iter()
        .filter_map(|ep| match &ep.provenance {
            Provenance::Augmented { source_episode_id, .. } if !ids.contains(source_episode_id.as_str()) => {
                Some(Violation {
                    episode_id: Some(ep.id.clone()),
                    kind: ViolationKind::DanglingProvenance {
                        source_episode_id: source_episode_id.clone(),
                    },
                })
            }
            _ => None,
        })
        .collect()
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

/// PNG bytes with fixed encoder settings, so output is stable.
pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Adaptive)
        .write_image(image.as_raw(), image.width(), image.height(), image::ExtendedColorType::Rgb8)
        .expect("encoding an in-memory RGB8 buffer cannot fail");
    buf
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Validate, then write the dataset under `dir`. Nothing is written when
/// validation fails.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), StoreError> {
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(StoreError::Invalid(violations));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = dataset.manifest();
    let by_id: HashMap<&str, &Episode> = dataset.episodes.iter().map(|e| (e.id.as_str(), e)).collect();
    for desc in &manifest.episodes {
        let ep = by_id[desc.id.as_str()];
        let frames_dir = dir.join(&desc.frames_path);
        if frames_dir.exists() {
            // Stale frames from an earlier, longer episode would break the length check.
            fs::remove_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        }
        fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        for (i, frame) in ep.frames.iter().enumerate() {
            let path = frames_dir.join(frame_file_name(i));
            fs::write(&path, encode_png(&frame.image)).map_err(io_err(&path))?;
        }
        let actions: Vec<&ActionVector> = ep.actions().collect();
        write_json(&dir.join(&desc.actions_path), &actions)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(StoreError::MissingManifest(path));
    }
    // Check the version before the full schema so old manifests fail clearly.
    let raw: serde_json::Value = read_json(&path)?;
    let version = raw.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if version != MANIFEST_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            expected: MANIFEST_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|source| StoreError::Json { path, source })
}

fn count_frames(dir: &Path) -> Result<usize, StoreError> {
    if !dir.is_dir() {
        return Ok(0);
    }
    let mut n = 0;
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.path().extension().is_some_and(|e| e == "png") {
            n += 1;
        }
    }
    Ok(n)
}

/// Load and fully validate a dataset. Every frame file named by the manifest
/// must exist; extra or missing frames are a length mismatch.
pub fn load_dataset(dir: &Path) -> Result<Dataset, StoreError> {
    let manifest = load_manifest(dir)?;
    let mut dataset = Dataset::new(manifest.name.clone(), manifest.action_dim, manifest.image_size);
    let mut violations = Vec::new();
    for desc in &manifest.episodes {
        let frames_dir = dir.join(&desc.frames_path);
        let actions_path = dir.join(&desc.actions_path);
        // null (how serializers write NaN/inf) is kept as NaN so validation flags it.
        let raw_actions: Vec<Vec<Option<f64>>> = read_json(&actions_path)?;
        let n_frames = count_frames(&frames_dir)?;
        if n_frames != desc.length || raw_actions.len() != desc.length {
            return Err(StoreError::LengthMismatch {
                episode_id: desc.id.clone(),
                declared: desc.length,
                frames: n_frames,
                actions: raw_actions.len(),
            });
        }
        let mut frames = Vec::with_capacity(desc.length);
        for (i, action) in raw_actions.into_iter().enumerate() {
            let path = frames_dir.join(frame_file_name(i));
            let bytes = fs::read(&path).map_err(|_| StoreError::LengthMismatch {
                episode_id: desc.id.clone(),
                declared: desc.length,
                frames: i,
                actions: desc.length,
            })?;
            let image = decode_png(&bytes).map_err(|source| StoreError::Image { path: path.clone(), source })?;
            frames.push(Frame {
                image,
                action: ActionVector(action.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()),
            });
        }
        dataset.episodes.push(Episode {
            id: desc.id.clone(),
            instruction: desc.instruction.clone(),
            frames,
            provenance: desc.provenance.clone(),
        });
    }
    violations.extend(validate_dataset(&dataset));
    if !violations.is_empty() {
        return Err(StoreError::Invalid(violations));
    }
    Ok(dataset)
}
