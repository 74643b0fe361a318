//! A desk-scale success detector for "put the green chip bag in the drawer".
//!
//! Scenes come from the synthetic world: a drawer at a fixed spot, the bag
//! either inside it (success) or elsewhere on the table (failure). The
//! detector is nearest-centroid over colour histograms of the drawer crop,
//! 32 bins per channel, each channel normalized to sum to 1. The score is the
//! logistic of the distance margin `d(failure) - d(success)`.
//!
//! The OOD split fills drawers with clutter that never appears in the clean
//! training scenes. Clutter augmentation of the training set runs the real
//! augmentation pipeline in add-distractor mode against mock backends.

use image::RgbImage;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Label, PredictionSet, Scored, Split};
use crate::inpainting::MockCascade;
use crate::pipeline::{augment_episode, AugmentMode, AugmentationJob, Backends, PipelineConfig};
use crate::prompting::{AugmentationSpec, PromptTriple, DISTRACTORS};
use crate::scene::{generate_scene, SceneObject, SceneSpec, ACTION_DIM};
use crate::segmentation::{MockDetector, Rect, ThresholdTable};
use crate::seed::{derive_seed, rng};
use crate::store::{ActionVector, Episode, Frame, Provenance};

pub const BINS: usize = 32;
pub const DRAWER_RECT: Rect = Rect {
    x: 64,
    y: 72,
    w: 128,
    h: 96,
};
pub const TARGET: &str = "green chip bag";
pub const TASK: &str = "put green chip bag in drawer";
/// Clutter used only by the OOD split.
pub const OOD_CLUTTER: [&str; 4] = ["pepsi can", "blue chip bag", "yellow rubber duck", "coke can"];
/// Distractor box painted by clutter augmentation.
pub const AUGMENT_BOX: (u32, u32) = (40, 44);

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub image: RgbImage,
    pub label: Label,
    /// Scene layout, kept so the pipeline's mock detector can be fed ground truth.
    pub spec: SceneSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSizes {
    pub train_per_class: usize,
    pub id_per_class: usize,
    pub ood_per_class: usize,
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        Self {
            train_per_class: 40,
            id_per_class: 38,
            ood_per_class: 29,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: Vec<ToyScene>,
    pub in_distribution: Vec<ToyScene>,
    pub ood: Vec<ToyScene>,
}

fn place_free(r: &mut impl Rng, area: Rect, (w, h): (u32, u32), taken: &[Rect]) -> Option<Rect> {
    let overlaps = |a: &Rect, b: &Rect| a.x < b.right() && b.x < a.right() && a.y < b.bottom() && b.y < a.bottom();
    for _ in 0..1000 {
        let x = r.random_range(area.x..=area.right() - w);
        let y = r.random_range(area.y..=area.bottom() - h);
        let cand = Rect::new(x, y, w, h);
        if !taken.iter().any(|t| overlaps(&cand, t)) {
            return Some(cand);
        }
    }
    None
}

/// Layout of one drawer scene. `clutter` objects go inside the drawer.
pub fn drawer_scene_spec(inside: bool, clutter: &[&str], seed: u64) -> SceneSpec {
    let mut r = rng(derive_seed(seed, &["drawer-scene".into()]));
    let inner = Rect::new(DRAWER_RECT.x + 4, DRAWER_RECT.y + 4, DRAWER_RECT.w - 8, DRAWER_RECT.h - 8);
    let bag = (r.random_range(30..=34), r.random_range(34..=38));
    let bag_rect = if inside {
        place_free(&mut r, inner, bag, &[]).expect("bag fits in drawer")
    } else {
        place_free(&mut r, Rect::new(16, 180, 224, 68), bag, &[]).expect("bag fits on table")
    };
    let mut objects = vec![SceneObject::sprite("drawer", DRAWER_RECT), SceneObject::sprite(TARGET, bag_rect)];
    let mut taken = vec![bag_rect];
    for noun in clutter {
        let size = (r.random_range(20..=26), r.random_range(32..=38));
        if let Some(rect) = place_free(&mut r, inner, size, &taken) {
            taken.push(rect);
            objects.push(SceneObject::sprite(*noun, rect));
        }
    }
    SceneSpec::tabletop(objects)
}

fn render(inside: bool, clutter: &[&str], seed: u64) -> ToyScene {
    let spec = drawer_scene_spec(inside, clutter, seed);
    let (image, _) = generate_scene(&spec, seed).expect("drawer scenes are valid");
    ToyScene {
        image,
        label: if inside { Label::Success } else { Label::Failure },
        spec,
        seed,
    }
}

fn split_scenes(seed: u64, tag: &str, per_class: usize, ood: bool) -> Vec<ToyScene> {
    (0..2 * per_class)
        .map(|i| {
            let s = derive_seed(seed, &[tag.into(), i.into()]);
            let clutter: Vec<&str> = if ood {
                let mut r = rng(derive_seed(s, &["clutter".into()]));
                OOD_CLUTTER.choose_multiple(&mut r, 2).copied().collect()
            } else {
                Vec::new()
            };
            render(i % 2 == 0, &clutter, s)
        })
        .collect()
}

/// Seeded train / in-distribution / OOD scenes with balanced classes.
pub fn benchmark(seed: u64, sizes: BenchmarkSizes) -> Benchmark {
    Benchmark {
        train: split_scenes(seed, "train", sizes.train_per_class, false),
        in_distribution: split_scenes(seed, "in-distribution", sizes.id_per_class, false),
        ood: split_scenes(seed, "ood", sizes.ood_per_class, true),
    }
}

/// One cluttered copy of each scene, made by the augmentation pipeline:
/// region "drawer", the bag passed through, one distractor box painted in a
/// free spot. Scenes the pipeline skips are left out.
pub fn clutter_augment(scenes: &[ToyScene], seed: u64) -> Vec<ToyScene> {
    let detector = MockDetector::new();
    let inpainter = MockCascade::new(64);
    let thresholds = ThresholdTable::default()
        .get("distractor-addition")
        .expect("shipped thresholds include distractor-addition")
        .clone();
    let config = PipelineConfig::for_mocks();
    let backends = Backends {
        detector: &detector,
        inpainter: &inpainter,
    };
    let mut out = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let (_, truth) = generate_scene(&scene.spec, scene.seed).expect("valid scene");
        detector.register(&scene.image, truth.annotations());
        let job_seed = derive_seed(seed, &["clutter".into(), i.into()]);
        let distractor = DISTRACTORS[(job_seed % DISTRACTORS.len() as u64) as usize];
        let id = format!("toy_{i:04}");
        let episode = Episode {
            id: id.clone(),
            instruction: TASK.into(),
            frames: vec![Frame {
                image: scene.image.clone(),
                action: ActionVector::zeros(ACTION_DIM),
            }],
            provenance: Provenance::Collected,
        };
        let job = AugmentationJob {
            episode_id: id.clone(),
            output_id: format!("{id}a"),
            spec: AugmentationSpec::new(TASK, "cluttered drawer"),
            triple: PromptTriple::new("drawer", [TARGET], format!("add a {distractor} in the drawer")),
            thresholds: thresholds.clone(),
            seed: job_seed,
            mode: AugmentMode::AddDistractor {
                box_w: AUGMENT_BOX.0,
                box_h: AUGMENT_BOX.1,
            },
        };
        match augment_episode(&episode, &job, backends, &config) {
            Ok(aug) => out.push(ToyScene {
                image: aug.episode.frames[0].image.clone(),
                label: scene.label,
                spec: scene.spec.clone(),
                seed: scene.seed,
            }),
            Err(e) => log::warn!("clutter augmentation skipped scene {i}: {e}"),
        }
    }
    out
}

/// Per-channel colour histograms of the drawer crop, each channel summing to 1.
pub fn features(image: &RgbImage) -> Vec<f64> {
    let mut hist = vec![0.0; 3 * BINS];
    let r = DRAWER_RECT;
    let n = f64::from(r.w * r.h);
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            let p = image.get_pixel(x, y);
            for c in 0..3 {
                hist[c * BINS + usize::from(p[c]) * BINS / 256] += 1.0 / n;
            }
        }
    }
    hist
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDetector {
    pub success_centroid: Vec<f64>,
    pub failure_centroid: Vec<f64>,
}

impl ToyDetector {
    pub fn score(&self, image: &RgbImage) -> f64 {
        let f = features(image);
        let margin = distance(&f, &self.failure_centroid) - distance(&f, &self.success_centroid);
        1.0 / (1.0 + (-margin).exp())
    }
}

pub fn toy_detector_train(scenes: &[ToyScene]) -> Result<ToyDetector, EvalError> {
    let centroid = |label: Label| -> Option<Vec<f64>> {
        let members: Vec<Vec<f64>> = scenes.iter().filter(|s| s.label == label).map(|s| features(&s.image)).collect();
        if members.is_empty() {
            return None;
        }
        let mut c = vec![0.0; 3 * BINS];
        for m in &members {
            for (acc, v) in c.iter_mut().zip(m) {
                *acc += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= members.len() as f64);
        Some(c)
    };
    if scenes.is_empty() {
        return Err(EvalError::NoTrainingData);
    }
    match (centroid(Label::Success), centroid(Label::Failure)) {
        (Some(success_centroid), Some(failure_centroid)) => Ok(ToyDetector {
            success_centroid,
            failure_centroid,
        }),
        (Some(_), None) => Err(EvalError::SingleClass(Label::Success)),
        _ => Err(EvalError::SingleClass(Label::Failure)),
    }
}

pub fn toy_detector_eval(detector: &ToyDetector, scenes: &[ToyScene], split: Split) -> PredictionSet {
    PredictionSet {
        split,
        items: scenes
            .iter()
            .map(|s| Scored {
                score: detector.score(&s.image),
                label: s.label,
            })
            .collect(),
    }
}

/// Train on `bench.train`, plus its clutter-augmented copies when
/// `clutter_augmented` is set.
pub fn train_on_benchmark(bench: &Benchmark, clutter_augmented: bool, seed: u64) -> Result<ToyDetector, EvalError> {
    if clutter_augmented {
        let mut scenes = bench.train.clone();
        scenes.extend(clutter_augment(&bench.train, seed));
        toy_detector_train(&scenes)
    } else {
        toy_detector_train(&bench.train)
    }
}
