use std::collections::{HashMap, VecDeque};
use std::sync::RwLock;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Detection, Mask, Rect, Rle, SegmentationError};
use crate::backend::{BackendError, JsonClient, RetryPolicy};
use crate::palette;
use crate::seed::digest64;

pub trait DetectionBackend: Send + Sync {
    /// Zero or more detections per query, in any order.
    fn detect(&self, image: &RgbImage, queries: &[String], max_detections: usize)
        -> Result<Vec<Detection>, BackendError>;

    fn name(&self) -> &str;
}

pub const DEFAULT_MAX_DETECTIONS: usize = 16;

/// Run `queries` against `backend` and check every returned detection.
pub fn detect(
    backend: &dyn DetectionBackend,
    image: &RgbImage,
    queries: &[String],
) -> Result<Vec<Detection>, SegmentationError> {
    if queries.is_empty() {
        return Err(SegmentationError::EmptyQueries);
    }
    let detections = backend.detect(image, queries, DEFAULT_MAX_DETECTIONS)?;
    let size = (image.height(), image.width());
    for d in &detections {
        if let Err(reason) = d.check(size) {
            return Err(BackendError::malformed(
                backend.name(),
                reason,
                format!("query={:?} score={} bbox={:?}", d.query, d.score, d.bbox.to_array()),
            )
            .into());
        }
    }
    Ok(detections)
}

/// A labelled region of an image the mock detector has been told about.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub name: String,
    pub visible: Mask,
    /// Visible pixels over pixels of the un-occluded shape.
    pub visibility: f64,
}

/// Offline stand-in for an open-vocabulary detector.
///
/// Images registered with ground-truth annotations (synthetic scenes) are
/// answered from the annotations: one detection per annotation whose name
/// token-overlaps the query, scored by its visibility fraction. Any other
/// image is answered by exact colour match against the sprite palette: one
/// detection per 8-connected component of the matching colours, scored by
/// the component's fill ratio of its bounding box.
#[derive(Debug, Default)]
pub struct MockDetector {
    registry: RwLock<HashMap<u64, Vec<Annotation>>>,
}

fn fingerprint(image: &RgbImage) -> u64 {
    let mut bytes = Vec::with_capacity(image.as_raw().len() + 8);
    bytes.extend_from_slice(&image.width().to_le_bytes());
    bytes.extend_from_slice(&image.height().to_le_bytes());
    bytes.extend_from_slice(image.as_raw());
    digest64(&bytes)
}

impl MockDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, image: &RgbImage, annotations: Vec<Annotation>) {
        self.registry
            .write()
            .expect("registry poisoned")
            .insert(fingerprint(image), annotations);
    }

    pub fn registered(&self) -> usize {
        self.registry.read().expect("registry poisoned").len()
    }

    fn from_annotations(annotations: &[Annotation], query: &str) -> Vec<Detection> {
        annotations
            .iter()
            .filter(|a| palette::token_overlap(query, &a.name))
            .filter_map(|a| Detection::from_mask(query, a.visibility, a.visible.clone()))
            .collect()
    }

    fn from_palette(image: &RgbImage, query: &str) -> Vec<Detection> {
        let mut nouns: Vec<String> = palette::vocabulary()
            .into_iter()
            .chain([palette::ARM_NOUN, palette::GRIPPER_NOUN, palette::TABLE_NOUN])
            .filter(|n| palette::token_overlap(query, n))
            .map(str::to_string)
            .collect();
        if nouns.is_empty() {
            nouns.push(palette::extract_object_noun(query));
        }
        let mut out = Vec::new();
        for noun in nouns {
            let colors = palette::colors_for(&noun);
            let hits = Mask::from_fn(image.height(), image.width(), |x, y| colors.contains(image.get_pixel(x, y)));
            for component in connected_components(&hits) {
                let bbox = component.bbox().expect("components are nonempty");
                let score = (component.count() as f64 / bbox.area() as f64).min(1.0);
                out.extend(Detection::from_mask(query, score, component));
            }
        }
        out
    }
}

impl DetectionBackend for MockDetector {
    fn detect(
        &self,
        image: &RgbImage,
        queries: &[String],
        max_detections: usize,
    ) -> Result<Vec<Detection>, BackendError> {
        let registry = self.registry.read().expect("registry poisoned");
        let annotations = registry.get(&fingerprint(image));
        let mut out = Vec::new();
        for query in queries {
            let mut found = match annotations {
                Some(a) => Self::from_annotations(a, query),
                None => Self::from_palette(image, query),
            };
            if found.len() > max_detections {
                found.sort_by(|a, b| b.score.total_cmp(&a.score));
                found.truncate(max_detections);
            }
            out.extend(found);
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "mock-detector"
    }
}

/// 8-connected components, ordered by their first pixel in row-major order.
pub(crate) fn connected_components(mask: &Mask) -> Vec<Mask> {
    let (h, w) = mask.size();
    let mut seen = Mask::empty(h, w);
    let mut out = Vec::new();
    for (sx, sy) in mask.iter_set() {
        if seen.get(sx, sy) {
            continue;
        }
        let mut comp = Mask::empty(h, w);
        let mut queue = VecDeque::from([(sx, sy)]);
        seen.set(sx, sy, true);
        while let Some((x, y)) = queue.pop_front() {
            comp.set(x, y, true);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
                    if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                        continue;
                    }
                    let (nx, ny) = (nx as u32, ny as u32);
                    if mask.get(nx, ny) && !seen.get(nx, ny) {
                        seen.set(nx, ny, true);
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

#[derive(Serialize)]
struct DetectRequest<'a> {
    image_png_b64: String,
    queries: &'a [String],
    max_detections: usize,
}

/// One detection as it travels over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub query: String,
    pub score: f64,
    pub bbox: [u32; 4],
    pub mask_rle: Rle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

impl WireDetection {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            query: d.query.clone(),
            score: d.score,
            bbox: d.bbox.to_array(),
            mask_rle: d.mask.to_rle(),
        }
    }
}

/// `POST /v1/detect` client.
#[derive(Debug, Clone)]
pub struct HttpDetector {
    client: JsonClient,
    endpoint: String,
}

impl HttpDetector {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy) -> Self {
        let client = JsonClient::new(base_url, retry, Duration::from_secs(60));
        let endpoint = format!("{}/v1/detect", client.base_url());
        Self { client, endpoint }
    }
}

impl DetectionBackend for HttpDetector {
    fn detect(
        &self,
        image: &RgbImage,
        queries: &[String],
        max_detections: usize,
    ) -> Result<Vec<Detection>, BackendError> {
        let req = DetectRequest {
            image_png_b64: crate::inpainting::png_b64(image),
            queries,
            max_detections,
        };
        let resp: DetectResponse = self.client.post("/v1/detect", &req)?;
        resp.detections
            .into_iter()
            .map(|w| {
                let payload = || serde_json::to_string(&w).unwrap_or_default();
                let mask = super::rle_decode(&w.mask_rle)
                    .map_err(|e| BackendError::malformed(&self.endpoint, e.to_string(), payload()))?;
                if !w.score.is_finite() {
                    return Err(BackendError::malformed(&self.endpoint, "non-finite score", payload()));
                }
                Ok(Detection {
                    query: w.query.clone(),
                    score: w.score,
                    bbox: Rect::from_array(w.bbox),
                    mask,
                })
            })
            .collect()
    }

    fn name(&self) -> &str {
        &self.endpoint
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn components_split_on_gaps() {
        let mut m = Mask::empty(5, 5);
        m.set(0, 0, true);
        m.set(1, 1, true); // diagonal neighbour joins
        m.set(4, 4, true);
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].count(), 2);
        assert_eq!(comps[1].count(), 1);
    }

    #[test]
    fn palette_path_finds_painted_sprite() {
        let mut img = RgbImage::from_pixel(32, 32, Rgb([1, 1, 1]));
        let sprite = palette::sprite_for("coke can");
        palette::paint_sprite(&mut img, &sprite, Rect::new(4, 4, 6, 10), None, None);
        let det = MockDetector::new();
        let found = det.detect(&img, &["coke can".to_string()], 8).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].bbox, Rect::new(4, 4, 6, 10));
        assert_eq!(found[0].score, 1.0);
        assert!(det.detect(&img, &["pepsi can".to_string()], 8).unwrap().is_empty());
    }

    #[test]
    fn registered_image_uses_annotations() {
        let img = RgbImage::new(8, 8);
        let det = MockDetector::new();
        let visible = Mask::from_rect(8, 8, Rect::new(0, 0, 2, 2));
        det.register(
            &img,
            vec![Annotation {
                name: "drawer".into(),
                visible: visible.clone(),
                visibility: 0.25,
            }],
        );
        let found = det.detect(&img, &["empty drawer".to_string()], 8).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].score, 0.25);
        assert_eq!(found[0].mask, visible);
        assert_eq!(found[0].query, "empty drawer");
    }

    #[test]
    fn empty_query_list_is_rejected() {
        let img = RgbImage::new(4, 4);
        assert!(matches!(detect(&MockDetector::new(), &img, &[]), Err(SegmentationError::EmptyQueries)));
    }

    struct Broken;
    impl DetectionBackend for Broken {
        fn detect(&self, _: &RgbImage, q: &[String], _: usize) -> Result<Vec<Detection>, BackendError> {
            Ok(vec![Detection {
                query: q[0].clone(),
                score: 0.5,
                bbox: Rect::new(0, 0, 4, 4),
                mask: Mask::from_rect(4, 4, Rect::new(1, 1, 1, 1)),
            }])
        }
        fn name(&self) -> &str {
            "broken"
        }
    }

    #[test]
    fn loose_bbox_from_backend_is_malformed() {
        let img = RgbImage::new(4, 4);
        let err = detect(&Broken, &img, &["x".to_string()]).unwrap_err();
        assert!(matches!(err, SegmentationError::Backend(BackendError::Malformed { .. })));
    }
}
