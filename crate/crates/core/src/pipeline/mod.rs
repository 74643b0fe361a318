//! Episode- and dataset-level augmentation.
//!
//! For every frame of an episode the region query and passthrough queries
//! are detected, thresholded and turned into a target mask, which is then
//! inpainted. Masks are recomputed independently per frame. Actions are
//! copied bit-for-bit and the instruction only changes when the
//! augmentation declares a new task.
//!
//! Frames and episodes run on a rayon pool sized by
//! [`PipelineConfig::parallelism`]; since every backend call blocks its
//! worker, that is also the bound on in-flight backend requests. Results are
//! assembled by (episode id, frame index), so output does not depend on
//! scheduling.

mod mix;

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mix::{mix_datasets, MixError, MixManifest, MixSource, MixWeights, Origin};

use crate::backend::RetryPolicy;
use crate::inpainting::{inpaint_cascade, verify_locality, CascadeConfig, InpaintBackend, InpaintRequest};
use crate::prompting::{AugmentationSpec, PromptTriple};
use crate::segmentation::{
    detect, filter_by_threshold, sample_free_rect, select_best, subtract_passthrough, union_masks, Detection,
    DetectionBackend, Mask, Rect, ThresholdConfig,
};
use crate::seed::{derive_seed, frame_seed};
use crate::store::{Dataset, Episode, Frame, Provenance};

/// Region-area ratio between adjacent frames above which the episode is
/// flagged as having an irregular mask.
pub const AREA_CHANGE_LIMIT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AugmentMode {
    /// Paint over the detected region minus passthrough objects.
    ReplaceTarget,
    /// Paint a `box_w x box_h` distractor at a free spot inside the region.
    AddDistractor { box_w: u32, box_h: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationJob {
    pub episode_id: String,
    /// Id of the augmented episode.
    pub output_id: String,
    pub spec: AugmentationSpec,
    pub triple: PromptTriple,
    pub thresholds: ThresholdConfig,
    pub seed: u64,
    pub mode: AugmentMode,
}

impl AugmentationJob {
    pub fn validate(&self) -> Result<(), String> {
        self.spec.validate().map_err(|e| e.to_string())?;
        self.triple.validate().map_err(|e| e.to_string())?;
        self.thresholds.validate().map_err(|e| e.to_string())?;
        if let AugmentMode::AddDistractor { box_w, box_h } = self.mode {
            if box_w == 0 || box_h == 0 {
                return Err("distractor box must have positive size".into());
            }
        }
        if self.output_id.is_empty() {
            return Err("output id is empty".into());
        }
        Ok(())
    }
}

/// Everything shared by the jobs of one augmentation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobTemplate {
    pub spec: AugmentationSpec,
    pub triple: PromptTriple,
    pub thresholds: ThresholdConfig,
    pub mode: AugmentMode,
    pub seed: u64,
    /// Appended to the source id to form the augmented id.
    pub id_suffix: String,
}

/// One job per episode whose instruction equals the template's source task.
pub fn plan_jobs(dataset: &Dataset, template: &JobTemplate) -> Vec<AugmentationJob> {
    let mut jobs: Vec<AugmentationJob> = dataset
        .episodes
        .iter()
        .filter(|e| e.instruction == template.spec.source_task)
        .map(|e| AugmentationJob {
            episode_id: e.id.clone(),
            output_id: format!("{}{}", e.id, template.id_suffix),
            spec: template.spec.clone(),
            triple: template.triple.clone(),
            thresholds: template.thresholds.clone(),
            seed: template.seed,
            mode: template.mode,
        })
        .collect();
    jobs.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    jobs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagPolicy {
    #[default]
    Warn,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub parallelism: usize,
    /// Per-channel tolerance for pixels outside the mask.
    pub locality_tolerance: u8,
    pub flag_policy: FlagPolicy,
    pub cascade: CascadeConfig,
    pub retry: RetryPolicy,
    /// Send region and passthrough queries in one detection call.
    pub batch_queries: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            parallelism: 1,
            locality_tolerance: 2,
            flag_policy: FlagPolicy::Warn,
            cascade: CascadeConfig::default(),
            retry: RetryPolicy::default(),
            batch_queries: true,
        }
    }
}

impl PipelineConfig {
    /// Mock backends are exact, so nothing outside the mask may change.
    pub fn for_mocks() -> Self {
        Self {
            locality_tolerance: 0,
            retry: RetryPolicy::no_backoff(1),
            ..Self::default()
        }
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism.max(1))
            .build()
            .expect("failed to build worker pool")
    }
}

#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub detector: &'a dyn DetectionBackend,
    pub inpainter: &'a dyn InpaintBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QualityFlag {
    /// Region area changed by more than [`AREA_CHANGE_LIMIT`] between frames.
    IrregularMask { frame_index: usize, ratio: f64 },
    /// Inpainting changed a pixel outside the mask beyond tolerance.
    Locality { frame_index: usize, x: u32, y: u32, diff: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipCause {
    RegionBelowThreshold { query: String },
    PlacementInfeasible(String),
    Backend(String),
    Rejected(QualityFlag),
    InvalidJob(String),
    UnknownEpisode,
    DuplicateOutput(String),
}

impl fmt::Display for SkipCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipCause::RegionBelowThreshold { query } => write!(f, "no `{query}` detection passed the region threshold"),
            SkipCause::PlacementInfeasible(m) => write!(f, "distractor placement infeasible: {m}"),
            SkipCause::Backend(m) => write!(f, "backend failure: {m}"),
            SkipCause::Rejected(flag) => write!(f, "rejected by quality flag: {flag:?}"),
            SkipCause::InvalidJob(m) => write!(f, "invalid job: {m}"),
            SkipCause::UnknownEpisode => write!(f, "episode not found in dataset"),
            SkipCause::DuplicateOutput(id) => write!(f, "output id {id} produced by more than one job"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("episode {episode_id} skipped{}: {cause}", .frame_index.map(|i| format!(" at frame {i}")).unwrap_or_default())]
pub struct EpisodeSkipped {
    pub episode_id: String,
    pub frame_index: Option<usize>,
    pub cause: SkipCause,
    /// Best region score seen in the failing frame, if any detection came back.
    pub best_score: Option<f64>,
}

/// One row of `skips.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub episode_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    pub cause: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_score: Option<f64>,
}

impl From<&EpisodeSkipped> for SkipEntry {
    fn from(s: &EpisodeSkipped) -> Self {
        Self {
            episode_id: s.episode_id.clone(),
            frame_index: s.frame_index,
            cause: s.cause.to_string(),
            best_score: s.best_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEpisode {
    pub episode: Episode,
    /// Mask handed to the inpainter, per frame.
    pub target_masks: Vec<Mask>,
    pub flags: Vec<QualityFlag>,
}

struct FrameMasks {
    region_area: u64,
    subtracted: Mask,
}

struct FrameFailure {
    cause: SkipCause,
    best_score: Option<f64>,
}

impl FrameFailure {
    fn backend(e: impl ToString) -> Self {
        Self {
            cause: SkipCause::Backend(e.to_string()),
            best_score: None,
        }
    }
}

fn run_detection(
    detector: &dyn DetectionBackend,
    image: &image::RgbImage,
    triple: &PromptTriple,
    batch: bool,
) -> Result<(Vec<Detection>, Vec<Detection>), FrameFailure> {
    let region_q = vec![triple.region_query.clone()];
    let pass_q = triple.passthrough_queries.clone();
    let (region, pass) = if batch {
        let mut all = region_q.clone();
        all.extend(pass_q.iter().cloned());
        let found = detect(detector, image, &all).map_err(FrameFailure::backend)?;
        found.into_iter().partition(|d| d.query == triple.region_query)
    } else {
        let region = detect(detector, image, &region_q).map_err(FrameFailure::backend)?;
        let pass = detect(detector, image, &pass_q).map_err(FrameFailure::backend)?;
        (region, pass)
    };
    let region = region.into_iter().filter(|d| d.query == triple.region_query).collect();
    let pass = pass.into_iter().filter(|d| pass_q.contains(&d.query)).collect();
    Ok((region, pass))
}

fn frame_masks(
    image: &image::RgbImage,
    job: &AugmentationJob,
    detector: &dyn DetectionBackend,
    config: &PipelineConfig,
) -> Result<FrameMasks, FrameFailure> {
    let (region, pass) = run_detection(detector, image, &job.triple, config.batch_queries)?;
    let best_score = region.iter().map(|d| d.score).reduce(f64::max);
    let kept = filter_by_threshold(&region, job.thresholds.region_threshold);
    let best = select_best(&kept).map_err(|_| FrameFailure {
        cause: SkipCause::RegionBelowThreshold {
            query: job.triple.region_query.clone(),
        },
        best_score,
    })?;
    let pass = filter_by_threshold(&pass, job.thresholds.passthrough_threshold);
    let pass_union = union_masks(pass.iter().map(|d| &d.mask)).map_err(FrameFailure::backend)?;
    let subtracted =
        subtract_passthrough(&best.mask, pass_union.as_slice()).map_err(FrameFailure::backend)?;
    Ok(FrameMasks {
        region_area: best.mask.count(),
        subtracted,
    })
}

fn area_flags(masks: &[FrameMasks]) -> Vec<QualityFlag> {
    masks
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let (a, b) = (w[0].region_area as f64, w[1].region_area as f64);
            let ratio = if a.min(b) == 0.0 { f64::INFINITY } else { a.max(b) / a.min(b) };
            (ratio > AREA_CHANGE_LIMIT).then_some(QualityFlag::IrregularMask {
                frame_index: i + 1,
                ratio,
            })
        })
        .collect()
}

/// Augment every frame of `episode` according to `job`.
///
/// All-or-nothing: if any frame's region fails its threshold, a distractor
/// placement becomes infeasible, or a backend call fails after retries, the
/// whole episode is skipped and the first failing frame is reported.
pub fn augment_episode(
    episode: &Episode,
    job: &AugmentationJob,
    backends: Backends<'_>,
    config: &PipelineConfig,
) -> Result<AugmentedEpisode, EpisodeSkipped> {
    config.pool().install(|| augment_in_pool(episode, job, backends, config))
}

fn augment_in_pool(
    episode: &Episode,
    job: &AugmentationJob,
    backends: Backends<'_>,
    config: &PipelineConfig,
) -> Result<AugmentedEpisode, EpisodeSkipped> {
    let skip = |frame_index: Option<usize>, cause: SkipCause, best_score: Option<f64>| EpisodeSkipped {
        episode_id: episode.id.clone(),
        frame_index,
        cause,
        best_score,
    };
    job.validate().map_err(|m| skip(None, SkipCause::InvalidJob(m), None))?;
    if job.episode_id != episode.id {
        return Err(skip(
            None,
            SkipCause::InvalidJob(format!("job is for episode {}", job.episode_id)),
            None,
        ));
    }

    let masks: Vec<Result<FrameMasks, FrameFailure>> = episode
        .frames
        .par_iter()
        .map(|f| frame_masks(&f.image, job, backends.detector, config))
        .collect();
    let masks: Vec<FrameMasks> = masks
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|f| skip(Some(i), f.cause, f.best_score)))
        .collect::<Result<_, _>>()?;

    let mut flags = area_flags(&masks);

    let targets: Vec<Mask> = match job.mode {
        AugmentMode::ReplaceTarget => masks.into_iter().map(|m| m.subtracted).collect(),
        AugmentMode::AddDistractor { box_w, box_h } => {
            let first = &masks[0].subtracted;
            let placement_seed = derive_seed(job.seed, &["placement".into(), episode.id.as_str().into()]);
            let rect: Rect = sample_free_rect(first, &[], (box_w, box_h), placement_seed)
                .map_err(|e| skip(Some(0), SkipCause::PlacementInfeasible(e.to_string()), None))?;
            let (h, w) = first.size();
            let boxed = Mask::from_rect(h, w, rect);
            for (i, m) in masks.iter().enumerate() {
                if !boxed.is_subset_of(&m.subtracted) {
                    return Err(skip(
                        Some(i),
                        SkipCause::PlacementInfeasible(format!("{rect:?} no longer free")),
                        None,
                    ));
                }
            }
            vec![boxed; episode.frames.len()]
        }
    };

    let painted: Vec<Result<image::RgbImage, FrameFailure>> = episode
        .frames
        .par_iter()
        .zip(targets.par_iter())
        .enumerate()
        .map(|(i, (frame, mask))| {
            let req = InpaintRequest {
                image: frame.image.clone(),
                mask: mask.clone(),
                prompt: job.triple.inpaint_prompt.clone(),
                seed: frame_seed(job.seed, &episode.id, i),
            };
            inpaint_cascade(backends.inpainter, &req, &config.cascade, &config.retry).map_err(FrameFailure::backend)
        })
        .collect();

    let mut frames = Vec::with_capacity(episode.frames.len());
    for (i, (result, (src, mask))) in painted.into_iter().zip(episode.frames.iter().zip(&targets)).enumerate() {
        let image = result.map_err(|f| skip(Some(i), f.cause, f.best_score))?;
        let report = verify_locality(&src.image, &image, mask, config.locality_tolerance);
        if !report.ok {
            let worst = report.worst.expect("a failed report names a pixel");
            let flag = QualityFlag::Locality {
                frame_index: i,
                x: worst.x,
                y: worst.y,
                diff: worst.diff,
            };
            if config.flag_policy == FlagPolicy::Reject {
                return Err(skip(Some(i), SkipCause::Rejected(flag), None));
            }
            flags.push(flag);
        }
        frames.push(Frame {
            image,
            action: src.action.clone(),
        });
    }

    if config.flag_policy == FlagPolicy::Reject {
        if let Some(flag) = flags.first() {
            let frame = match flag {
                QualityFlag::IrregularMask { frame_index, .. } | QualityFlag::Locality { frame_index, .. } => *frame_index,
            };
            return Err(skip(Some(frame), SkipCause::Rejected(flag.clone()), None));
        }
    }
    for flag in &flags {
        log::warn!("episode {}: quality flag {flag:?}", episode.id);
    }

    Ok(AugmentedEpisode {
        episode: Episode {
            id: job.output_id.clone(),
            instruction: job.spec.new_instruction.clone().unwrap_or_else(|| episode.instruction.clone()),
            frames,
            provenance: Provenance::Augmented {
                source_episode_id: episode.id.clone(),
                prompt_triple: job.triple.clone(),
                seed: job.seed,
            },
        },
        target_masks: targets,
        flags,
    })
}

/// Row of `flags.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagEntry {
    pub episode_id: String,
    #[serde(flatten)]
    pub flag: QualityFlag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub dataset: Dataset,
    pub skips: Vec<SkipEntry>,
    pub flags: Vec<FlagEntry>,
    /// Skips caused by a backend failing after retries.
    pub backend_failures: usize,
}

/// Run every job against `dataset`. Per-episode failures become skip-report
/// rows; the augmented dataset holds the successes sorted by id.
pub fn augment_dataset(
    dataset: &Dataset,
    jobs: &[AugmentationJob],
    backends: Backends<'_>,
    config: &PipelineConfig,
) -> AugmentOutcome {
    let mut seen = HashSet::new();
    let duplicates: HashSet<&str> = jobs
        .iter()
        .filter(|j| !seen.insert(j.output_id.as_str()))
        .map(|j| j.output_id.as_str())
        .collect();

    let results: Vec<Result<AugmentedEpisode, EpisodeSkipped>> = config.pool().install(|| {
        jobs.par_iter()
            .map(|job| {
                let fail = |cause| EpisodeSkipped {
                    episode_id: job.episode_id.clone(),
                    frame_index: None,
                    cause,
                    best_score: None,
                };
                if duplicates.contains(job.output_id.as_str()) {
                    return Err(fail(SkipCause::DuplicateOutput(job.output_id.clone())));
                }
                let episode = dataset.episode(&job.episode_id).ok_or_else(|| fail(SkipCause::UnknownEpisode))?;
                augment_in_pool(episode, job, backends, config)
            })
            .collect()
    });

    let mut out = Dataset::new(format!("{}-augmented", dataset.name), dataset.action_dim, dataset.image_size);
    let mut skips = Vec::new();
    let mut flags = Vec::new();
    let mut backend_failures = 0;
    for r in results {
        match r {
            Ok(aug) => {
                flags.extend(aug.flags.into_iter().map(|flag| FlagEntry {
                    episode_id: aug.episode.id.clone(),
                    flag,
                }));
                out.episodes.push(aug.episode);
            }
            Err(s) => {
                log::warn!("{s}");
                if matches!(s.cause, SkipCause::Backend(_)) {
                    backend_failures += 1;
                }
                skips.push(SkipEntry::from(&s));
            }
        }
    }
    out.sort_episodes();
    skips.sort_by(|a, b| (&a.episode_id, a.frame_index).cmp(&(&b.episode_id, b.frame_index)));
    flags.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    AugmentOutcome {
        dataset: out,
        skips,
        flags,
        backend_failures,
    }
}
