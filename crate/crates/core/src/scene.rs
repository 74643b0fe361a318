//! Procedural tabletop world with exact ground truth.
//!
//! Scenes are drawn in layers: background, table, objects back-to-front,
//! then the robot arm and gripper on top. Every pixel belongs to exactly one
//! layer, and the ground-truth masks are read off the layer map, so they
//! match the drawn pixels exactly.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::palette::{self, ShapeKind, Sprite};
use crate::segmentation::{Annotation, Mask, Rect};
use crate::seed::{derive_seed, rng};
use crate::store::{ActionVector, Episode, Frame, Provenance};

pub const DEFAULT_IMAGE_SIZE: u32 = 256;
pub const ACTION_DIM: usize = 7;

/// Pixel half-width of the gripper and its height above the tip.
const GRIPPER_HALF_WIDTH: i64 = 14;
const GRIPPER_HEIGHT: i64 = 12;
const ARM_HALF_WIDTH: f64 = 9.0;
const ARM_LEAN: f64 = 0.18;
/// Gap kept between gripper and target before contact.
const HOVER_GAP: i64 = 6;
const LIFT_STEP: i64 = 6;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("object `{name}` placement {placement:?} lies outside the {width}x{height} image")]
    OutOfBounds {
        name: String,
        placement: Rect,
        width: u32,
        height: u32,
    },
    #[error("table region {0:?} lies outside the image")]
    TableOutOfBounds(Rect),
    #[error("duplicate object name `{0}`")]
    DuplicateName(String),
    #[error("object `{0}` has an empty placement")]
    EmptyPlacement(String),
    #[error("image size must be positive")]
    EmptyImage,
    #[error("target `{0}` is not in the scene")]
    TargetAbsent(String),
    #[error("episode length must be at least 1")]
    EmptyEpisode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSpec {
    Rectangle,
    Ellipse,
    /// Shape and colours of a vocabulary sprite.
    Sprite(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub shape: ShapeSpec,
    /// Flat fill colour; when absent the sprite for `name` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
    pub placement: Rect,
}

impl SceneObject {
    pub fn sprite(name: impl Into<String>, placement: Rect) -> Self {
        let name = name.into();
        Self {
            shape: ShapeSpec::Sprite(name.clone()),
            name,
            color: None,
            placement,
        }
    }

    fn resolve(&self) -> (Sprite, bool) {
        match &self.shape {
            ShapeSpec::Sprite(id) => (palette::sprite_for(id), true),
            ShapeSpec::Rectangle | ShapeSpec::Ellipse => {
                let mut s = palette::sprite_for(&self.name);
                s.shape = if self.shape == ShapeSpec::Ellipse {
                    ShapeKind::Ellipse
                } else {
                    ShapeKind::Rectangle
                };
                match self.color {
                    Some(c) => {
                        s.body = Rgb(c);
                        s.accent = Rgb(c);
                        (s, false)
                    }
                    None => (s, true),
                }
            }
        }
    }
}

/// Gripper tip position in pixels; may lie outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmPose {
    pub tip_x: i64,
    pub tip_y: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: u32,
    pub width: u32,
    pub table_region: Rect,
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmPose>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.height == 0 || self.width == 0 {
            return Err(SceneError::EmptyImage);
        }
        if !self.table_region.fits_in(self.height, self.width) {
            return Err(SceneError::TableOutOfBounds(self.table_region));
        }
        let mut names = std::collections::HashSet::new();
        for o in &self.objects {
            if o.placement.w == 0 || o.placement.h == 0 {
                return Err(SceneError::EmptyPlacement(o.name.clone()));
            }
            if !o.placement.fits_in(self.height, self.width) {
                return Err(SceneError::OutOfBounds {
                    name: o.name.clone(),
                    placement: o.placement,
                    width: self.width,
                    height: self.height,
                });
            }
            if !names.insert(o.name.as_str()) {
                return Err(SceneError::DuplicateName(o.name.clone()));
            }
        }
        Ok(())
    }

    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Full-image table with the given objects.
    pub fn tabletop(objects: Vec<SceneObject>) -> Self {
        Self {
            height: DEFAULT_IMAGE_SIZE,
            width: DEFAULT_IMAGE_SIZE,
            table_region: Rect::new(0, 0, DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE),
            objects,
            arm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub name: String,
    /// Un-occluded shape.
    pub full: Mask,
    pub visible: Mask,
}

impl ObjectTruth {
    pub fn visibility(&self) -> f64 {
        let full = self.full.count();
        if full == 0 {
            0.0
        } else {
            self.visible.count() as f64 / full as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<ObjectTruth>,
    pub arm: Mask,
    pub gripper: Mask,
    /// Visible table pixels.
    pub table: Mask,
    pub table_region: Rect,
    pub background: Mask,
}

impl GroundTruth {
    pub fn object(&self, name: &str) -> Option<&ObjectTruth> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Arm and gripper together.
    pub fn robot(&self) -> Mask {
        self.arm.union(&self.gripper).expect("same size")
    }

    /// Everything a detector could be asked about, with visibility scores.
    pub fn annotations(&self) -> Vec<Annotation> {
        let mut out: Vec<Annotation> = self
            .objects
            .iter()
            .map(|o| Annotation {
                name: o.name.clone(),
                visible: o.visible.clone(),
                visibility: o.visibility(),
            })
            .collect();
        for (name, mask) in [(palette::ARM_NOUN, &self.arm), (palette::GRIPPER_NOUN, &self.gripper)] {
            if !mask.is_empty() {
                out.push(Annotation {
                    name: name.to_string(),
                    visible: mask.clone(),
                    visibility: 1.0,
                });
            }
        }
        let area = self.table_region.area();
        if area > 0 {
            out.push(Annotation {
                name: palette::TABLE_NOUN.to_string(),
                visible: self.table.clone(),
                visibility: self.table.count() as f64 / area as f64,
            });
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Layer {
    Background,
    Table,
    Object(usize),
    Arm,
    Gripper,
}

/// Arm body quad and gripper rectangle for a tip position.
fn arm_polygons(pose: ArmPose) -> ([(f64, f64); 4], (i64, i64, i64, i64)) {
    let (tx, ty) = (pose.tip_x as f64, pose.tip_y as f64);
    let top = ty - GRIPPER_HEIGHT as f64;
    let far = top - 600.0;
    let lean = 600.0 * ARM_LEAN;
    let body = [
        (tx - ARM_HALF_WIDTH, top),
        (tx + ARM_HALF_WIDTH, top),
        (tx + ARM_HALF_WIDTH + lean, far),
        (tx - ARM_HALF_WIDTH + lean, far),
    ];
    let gripper = (
        pose.tip_x - GRIPPER_HALF_WIDTH,
        pose.tip_y - GRIPPER_HEIGHT,
        pose.tip_x + GRIPPER_HALF_WIDTH,
        pose.tip_y,
    );
    (body, gripper)
}

/// Even-odd point-in-polygon at the pixel centre.
fn in_polygon(poly: &[(f64, f64)], x: u32, y: u32) -> bool {
    let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn table_color(seed: u64, y: u32) -> Rgb<u8> {
    // Wood grain: 8-pixel bands in one of two shades.
    let band = derive_seed(seed, &["grain".into(), u64::from(y / 8).into()]);
    palette::TABLE_COLORS[(band & 1) as usize]
}

/// Render `spec`. Pure in `(spec, seed)`; the seed only varies table grain.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<(RgbImage, GroundTruth), SceneError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut layers = vec![Layer::Background; (h as usize) * (w as usize)];
    let idx = |x: u32, y: u32| (y as usize) * (w as usize) + x as usize;
    let mut image = RgbImage::from_pixel(w, h, palette::BACKGROUND_COLOR);

    for y in spec.table_region.y..spec.table_region.bottom() {
        let c = table_color(seed, y);
        for x in spec.table_region.x..spec.table_region.right() {
            layers[idx(x, y)] = Layer::Table;
            image.put_pixel(x, y, c);
        }
    }

    let mut fulls = Vec::with_capacity(spec.objects.len());
    for (k, obj) in spec.objects.iter().enumerate() {
        let (sprite, banded) = obj.resolve();
        let full = if banded {
            palette::paint_sprite(&mut image, &sprite, obj.placement, None, None)
        } else {
            let m = palette::shape_mask(h, w, obj.placement, sprite.shape);
            for (x, y) in m.iter_set() {
                image.put_pixel(x, y, sprite.body);
            }
            m
        };
        for (x, y) in full.iter_set() {
            layers[idx(x, y)] = Layer::Object(k);
        }
        fulls.push(full);
    }

    if let Some(pose) = spec.arm {
        let (body, (gx0, gy0, gx1, gy1)) = arm_polygons(pose);
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (i64::from(x), i64::from(y));
                if xi >= gx0 && xi < gx1 && yi >= gy0 && yi < gy1 {
                    layers[idx(x, y)] = Layer::Gripper;
                    image.put_pixel(x, y, palette::GRIPPER_COLOR);
                } else if in_polygon(&body, x, y) {
                    layers[idx(x, y)] = Layer::Arm;
                    image.put_pixel(x, y, palette::ARM_COLOR);
                }
            }
        }
    }

    let layer_mask = |want: Layer| Mask::from_fn(h, w, |x, y| layers[idx(x, y)] == want);
    let objects = spec
        .objects
        .iter()
        .zip(fulls)
        .enumerate()
        .map(|(k, (obj, full))| ObjectTruth {
            name: obj.name.clone(),
            full,
            visible: layer_mask(Layer::Object(k)),
        })
        .collect();
    let truth = GroundTruth {
        objects,
        arm: layer_mask(Layer::Arm),
        gripper: layer_mask(Layer::Gripper),
        table: layer_mask(Layer::Table),
        table_region: spec.table_region,
        background: layer_mask(Layer::Background),
    };
    Ok((image, truth))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub verb: String,
    pub target_object: String,
    /// Trailing phrase such as "into top drawer".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<String>,
    pub scene: SceneSpec,
}

impl TaskSpec {
    pub fn new(verb: impl Into<String>, target_object: impl Into<String>, scene: SceneSpec) -> Self {
        Self {
            verb: verb.into(),
            target_object: target_object.into(),
            destination: None,
            scene,
        }
    }

    pub fn instruction(&self) -> String {
        match &self.destination {
            Some(d) => format!("{} {} {}", self.verb, self.target_object, d),
            None => format!("{} {}", self.verb, self.target_object),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEpisode {
    pub episode: Episode,
    pub truths: Vec<GroundTruth>,
    /// First frame in which the gripper touches the target; `None` for
    /// single-frame episodes.
    pub contact_frame: Option<usize>,
}

impl SyntheticEpisode {
    /// Feed every frame's ground truth to a mock detector.
    pub fn register_with(&self, detector: &crate::segmentation::MockDetector) {
        for (frame, truth) in self.episode.frames.iter().zip(&self.truths) {
            detector.register(&frame.image, truth.annotations());
        }
    }
}

/// Scripted approach-grasp-lift episode.
///
/// The tip hovers above the target for frames `0..c`, touches it at frame
/// `c = T / 2`, then lifts it `LIFT_STEP` pixels per frame. Actions are the
/// tip deltas normalized by image size, followed by four zero rotation
/// slots and the gripper state (1 once closed).
pub fn generate_episode(task: &TaskSpec, length: usize, seed: u64) -> Result<SyntheticEpisode, SceneError> {
    if length == 0 {
        return Err(SceneError::EmptyEpisode);
    }
    task.scene.validate()?;
    let target_idx = task
        .scene
        .objects
        .iter()
        .position(|o| o.name == task.target_object)
        .ok_or_else(|| SceneError::TargetAbsent(task.target_object.clone()))?;
    let target = task.scene.objects[target_idx].placement;
    let (w, h) = (i64::from(task.scene.width), i64::from(task.scene.height));

    let mut r = rng(derive_seed(seed, &["arm-start".into()]));
    let cx = i64::from(target.x) + i64::from(target.w) / 2;
    let hover_y = i64::from(target.y) - HOVER_GAP;
    let start_x = r.random_range(GRIPPER_HALF_WIDTH..=(w - GRIPPER_HALF_WIDTH).max(GRIPPER_HALF_WIDTH));
    let start_y = r.random_range(hover_y.min(GRIPPER_HEIGHT)..=hover_y);
    let grip_depth = (i64::from(target.h) / 4).clamp(1, GRIPPER_HEIGHT);

    let contact = (length >= 2).then_some(length / 2);
    let mut tips = Vec::with_capacity(length);
    let mut offsets = Vec::with_capacity(length);
    for i in 0..length {
        match contact {
            Some(c) if i < c => {
                let t = if c > 1 { i as f64 / (c - 1) as f64 } else { 0.0 };
                let x = start_x as f64 + (cx - start_x) as f64 * t;
                let y = start_y as f64 + (hover_y - start_y) as f64 * t;
                tips.push((x.round() as i64, y.round() as i64));
                offsets.push(0i64);
            }
            Some(c) => {
                // Lift, but never past the top edge.
                let max_lift = i64::from(target.y);
                let lift = (LIFT_STEP * (i - c) as i64).min(max_lift);
                tips.push((cx, i64::from(target.y) + grip_depth - lift));
                offsets.push(lift);
            }
            None => {
                tips.push((start_x, start_y));
                offsets.push(0);
            }
        }
    }

    let mut frames = Vec::with_capacity(length);
    let mut truths = Vec::with_capacity(length);
    for i in 0..length {
        let mut spec = task.scene.clone();
        spec.objects[target_idx].placement.y = target.y - offsets[i] as u32;
        spec.arm = Some(ArmPose {
            tip_x: tips[i].0,
            tip_y: tips[i].1,
        });
        let (image, truth) = generate_scene(&spec, seed)?;
        let mut action = ActionVector::zeros(ACTION_DIM);
        if length > 1 {
            let next = tips.get(i + 1).copied().unwrap_or(tips[i]);
            action.0[0] = (next.0 - tips[i].0) as f64 / w as f64;
            action.0[1] = (next.1 - tips[i].1) as f64 / h as f64;
            action.0[6] = if contact.is_some_and(|c| i >= c) { 1.0 } else { 0.0 };
        }
        frames.push(Frame { image, action });
        truths.push(truth);
    }
    Ok(SyntheticEpisode {
        episode: Episode {
            id: format!("ep_{seed:016x}"),
            instruction: task.instruction(),
            frames,
            provenance: Provenance::Collected,
        },
        truths,
        contact_frame: contact,
    })
}

/// A tabletop with a drawer, a can, and the target placed by `seed`.
pub fn pick_scene(target: &str, seed: u64) -> SceneSpec {
    let mut r = rng(derive_seed(seed, &["pick-scene".into()]));
    let tw = r.random_range(34..=46);
    let th = r.random_range(44..=56);
    let tx = r.random_range(70..=(256 - 70 - tw));
    let ty = r.random_range(120..=(256 - 20 - th));
    let extra = if palette::normalize(target) == "coke can" { "pepsi can" } else { "coke can" };
    SceneSpec::tabletop(vec![
        SceneObject::sprite("drawer", Rect::new(8, 8, 60, 44)),
        SceneObject::sprite(extra, Rect::new(200, 40, 16, 28)),
        SceneObject::sprite(target, Rect::new(tx, ty, tw, th)),
    ])
}
