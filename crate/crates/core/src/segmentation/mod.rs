//! Open-vocabulary segmentation: the detection backend interface and the
//! mask post-processing applied to its output (thresholding, best-detection
//! selection, passthrough subtraction, free-region sampling, RLE).

mod backend;
mod mask;
mod rle;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backend::{
    detect, Annotation, DetectResponse, DetectionBackend, HttpDetector, MockDetector, WireDetection,
    DEFAULT_MAX_DETECTIONS,
};
pub use mask::{Mask, Rect};
pub use rle::{rle_decode, rle_encode, Rle};

use crate::backend::BackendError;

pub const MAX_PLACEMENT_ATTEMPTS: u32 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum SegmentationError {
    #[error("mask size mismatch: expected {expected:?}, found {found:?}")]
    SizeMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("RLE counts sum to {found}, expected {expected}")]
    RleCountMismatch { expected: u64, found: u64 },
    #[error("no detection to select from")]
    NoDetection,
    #[error("no free {w}x{h} placement found after {attempts} attempts")]
    PlacementExhausted { w: u32, h: u32, attempts: u32 },
    #[error("box {w}x{h} does not fit in a {width}x{height} image")]
    BoxTooLarge { w: u32, h: u32, width: u32, height: u32 },
    #[error("detection requires at least one query")]
    EmptyQueries,
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("unknown task family `{0}`")]
    UnknownTaskFamily(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl SegmentationError {
    pub fn is_backend(&self) -> bool {
        matches!(self, SegmentationError::Backend(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub query: String,
    pub score: f64,
    /// Tight bounding box of `mask`.
    pub bbox: Rect,
    pub mask: Mask,
}

impl Detection {
    /// Build a detection whose bbox is the tight box of `mask`. `None` for an
    /// empty mask.
    pub fn from_mask(query: impl Into<String>, score: f64, mask: Mask) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(Self {
            query: query.into(),
            score,
            bbox,
            mask,
        })
    }

    /// Check the detection invariants against the image it came from.
    pub fn check(&self, image_size: (u32, u32)) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if self.mask.size() != image_size {
            return Err(format!("mask size {:?} differs from image size {:?}", self.mask.size(), image_size));
        }
        match self.mask.bbox() {
            None => Err("mask is empty".into()),
            Some(tight) if tight != self.bbox => Err(format!("bbox {:?} is not the tight box {:?}", self.bbox, tight)),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub task_family: String,
    pub region_threshold: f64,
    pub passthrough_threshold: f64,
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        for t in [self.region_threshold, self.passthrough_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return Err(SegmentationError::InvalidThreshold(t));
            }
        }
        Ok(())
    }
}

/// Per-task-family thresholds, shipped as `config/thresholds.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdTable {
    pub families: Vec<ThresholdConfig>,
}

const DEFAULT_THRESHOLDS: &str = include_str!("../../config/thresholds.json");

impl Default for ThresholdTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_THRESHOLDS).expect("bundled threshold table is valid JSON")
    }
}

impl ThresholdTable {
    pub fn load(path: &Path) -> Result<Self, crate::store::StoreError> {
        crate::store::read_json(path)
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        self.families.iter().try_for_each(ThresholdConfig::validate)
    }

    pub fn get(&self, family: &str) -> Result<&ThresholdConfig, SegmentationError> {
        self.families
            .iter()
            .find(|f| f.task_family == family)
            .ok_or_else(|| SegmentationError::UnknownTaskFamily(family.to_string()))
    }
}

/// Detections with `score >= threshold`, in input order.
pub fn filter_by_threshold(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    detections.iter().filter(|d| d.score >= threshold).cloned().collect()
}

/// Highest-scoring detection; the earliest wins a tie.
pub fn select_best(detections: &[Detection]) -> Result<&Detection, SegmentationError> {
    let mut iter = detections.iter();
    let mut best = iter.next().ok_or(SegmentationError::NoDetection)?;
    for d in iter {
        if d.score > best.score {
            best = d;
        }
    }
    Ok(best)
}

/// Union of masks of one size; `None` for an empty list.
pub fn union_masks<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> Result<Option<Mask>, SegmentationError> {
    let mut acc: Option<Mask> = None;
    for m in masks {
        acc = Some(match acc {
            None => m.clone(),
            Some(a) => a.union(m)?,
        });
    }
    Ok(acc)
}

/// `region AND NOT (union of passthroughs)`.
pub fn subtract_passthrough(region: &Mask, passthroughs: &[Mask]) -> Result<Mask, SegmentationError> {
    let mut out = region.clone();
    for p in passthroughs {
        out = out.difference(p)?;
    }
    Ok(out)
}

struct Integral {
    width: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(allowed: &Mask) -> Self {
        let (h, w) = (allowed.height() as usize, allowed.width() as usize);
        let mut sums = vec![0u32; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += u32::from(allowed.get(x as u32, y as u32));
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w + 1, sums }
    }

    fn rect_sum(&self, r: Rect) -> u32 {
        let (x0, y0, x1, y1) = (r.x as usize, r.y as usize, r.right() as usize, r.bottom() as usize);
        let s = |x: usize, y: usize| self.sums[y * self.width + x];
        s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0)
    }
}

/// Rejection-sample a `w x h` rectangle inside `region` and clear of every
/// obstacle. Top-left candidates are uniform over all in-bounds positions.
pub fn sample_free_rect(
    region: &Mask,
    obstacles: &[Mask],
    (w, h): (u32, u32),
    seed: u64,
) -> Result<Rect, SegmentationError> {
    let (height, width) = region.size();
    if w == 0 || h == 0 || w > width || h > height {
        return Err(SegmentationError::BoxTooLarge { w, h, width, height });
    }
    let allowed = subtract_passthrough(region, obstacles)?;
    let integral = Integral::new(&allowed);
    let mut rng = crate::seed::rng(seed);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let x = rng.random_range(0..=width - w);
        let y = rng.random_range(0..=height - h);
        let rect = Rect::new(x, y, w, h);
        if integral.rect_sum(rect) == w * h {
            return Ok(rect);
        }
    }
    Err(SegmentationError::PlacementExhausted {
        w,
        h,
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

pub fn sample_free_region(
    region: &Mask,
    obstacles: &[Mask],
    box_size: (u32, u32),
    seed: u64,
) -> Result<Mask, SegmentationError> {
    let rect = sample_free_rect(region, obstacles, box_size, seed)?;
    Ok(Mask::from_rect(region.height(), region.width(), rect))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(score: f64) -> Detection {
        let mut m = Mask::empty(4, 4);
        m.set(1, 1, true);
        Detection::from_mask("q", score, m).unwrap()
    }

    #[test]
    fn shipped_thresholds() {
        let table = ThresholdTable::default();
        table.validate().unwrap();
        let get = |f: &str| {
            let c = table.get(f).unwrap();
            (c.region_threshold, c.passthrough_threshold)
        };
        assert_eq!(get("novel-object-pick"), (0.07, 0.05));
        assert_eq!(get("sink-placement"), (0.04, 0.03));
        assert_eq!(get("distractor-addition"), (0.3, 0.3));
        assert!(matches!(table.get("nope"), Err(SegmentationError::UnknownTaskFamily(_))));
    }

    #[test]
    fn novel_object_threshold_cuts_between_005_and_008() {
        let t = ThresholdTable::default().get("novel-object-pick").unwrap().region_threshold;
        let kept = filter_by_threshold(&[det(0.05), det(0.08)], t);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.08);
    }

    #[test]
    fn zero_threshold_keeps_all() {
        let ds = vec![det(0.0), det(0.3), det(1.0)];
        assert_eq!(filter_by_threshold(&ds, 0.0), ds);
    }

    #[test]
    fn select_best_cases() {
        assert!(matches!(select_best(&[]), Err(SegmentationError::NoDetection)));
        let single = [det(0.2)];
        assert_eq!(select_best(&single).unwrap(), &single[0]);
        let two = [det(0.2), det(0.9)];
        assert_eq!(select_best(&two).unwrap().score, 0.9);
        let mut tie = [det(0.5), det(0.5)];
        tie[1].query = "second".into();
        assert_eq!(select_best(&tie).unwrap().query, "q");
    }

    #[test]
    fn subtraction_identities() {
        let region = Mask::from_rect(8, 8, Rect::new(1, 1, 5, 5));
        assert_eq!(subtract_passthrough(&region, &[]).unwrap(), region);
        let cover = Mask::from_rect(8, 8, Rect::new(0, 0, 7, 7));
        assert!(subtract_passthrough(&region, &[cover]).unwrap().is_empty());
        assert!(matches!(
            subtract_passthrough(&region, &[Mask::empty(8, 9)]),
            Err(SegmentationError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn unique_placement_is_found() {
        let rect = Rect::new(3, 2, 4, 5);
        let region = Mask::from_rect(16, 16, rect);
        assert_eq!(sample_free_rect(&region, &[], (4, 5), 1).unwrap(), rect);
    }

    #[test]
    fn tiled_obstacles_exhaust() {
        let region = Mask::from_rect(16, 16, Rect::new(0, 0, 8, 8));
        let obstacles: Vec<Mask> = (0..4)
            .map(|i| Mask::from_rect(16, 16, Rect::new((i % 2) * 4, (i / 2) * 4, 4, 4)))
            .collect();
        assert!(matches!(
            sample_free_rect(&region, &obstacles, (2, 2), 3),
            Err(SegmentationError::PlacementExhausted { attempts: MAX_PLACEMENT_ATTEMPTS, .. })
        ));
    }

    #[test]
    fn oversized_box_is_rejected() {
        let region = Mask::full(4, 4);
        assert!(matches!(sample_free_rect(&region, &[], (5, 1), 0), Err(SegmentationError::BoxTooLarge { .. })));
    }

    #[test]
    fn detection_check_rejects_loose_bbox() {
        let mut d = det(0.5);
        assert!(d.check((4, 4)).is_ok());
        d.bbox = Rect::new(0, 0, 4, 4);
        assert!(d.check((4, 4)).is_err());
        let mut d = det(1.5);
        d.score = 1.5;
        assert!(d.check((4, 4)).is_err());
    }
}
