//! Sprite vocabulary shared by the synthetic world and the mock backends.
//!
//! Every noun maps to a two-tone sprite (body + accent band). Vocabulary
//! colours have all-even channels; colours for out-of-vocabulary nouns are
//! derived from a hash of the noun and have all-odd channels, so the two
//! families never collide. The mock detector finds objects by exact colour
//! match against this table, which is how an inpainted "coke can" gets
//! re-detected as a coke can.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::segmentation::{Mask, Rect};
use crate::seed::digest64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sprite {
    pub noun: String,
    pub shape: ShapeKind,
    pub body: Rgb<u8>,
    pub accent: Rgb<u8>,
}

impl Sprite {
    pub fn colors(&self) -> [Rgb<u8>; 2] {
        [self.body, self.accent]
    }

    pub fn matches(&self, px: &Rgb<u8>) -> bool {
        *px == self.body || *px == self.accent
    }
}

const VOCABULARY: &[(&str, ShapeKind, [u8; 3], [u8; 3])] = &[
    ("coke can", ShapeKind::Rectangle, [200, 16, 46], [240, 240, 240]),
    ("pepsi can", ShapeKind::Rectangle, [0, 70, 160], [220, 30, 60]),
    ("green chip bag", ShapeKind::Rectangle, [40, 160, 60], [250, 210, 0]),
    ("green rice chip bag", ShapeKind::Rectangle, [60, 150, 40], [244, 244, 200]),
    ("blue chip bag", ShapeKind::Rectangle, [30, 90, 200], [200, 200, 40]),
    ("brown chip bag", ShapeKind::Rectangle, [130, 80, 30], [230, 180, 90]),
    ("chip bag", ShapeKind::Rectangle, [246, 190, 0], [160, 20, 20]),
    ("blue microfiber cloth", ShapeKind::Rectangle, [60, 120, 230], [100, 160, 250]),
    ("polka dot microfiber cloth", ShapeKind::Rectangle, [236, 120, 180], [254, 254, 254]),
    ("box of crackers", ShapeKind::Rectangle, [220, 120, 20], [250, 230, 180]),
    ("drawer", ShapeKind::Rectangle, [112, 76, 40], [90, 60, 30]),
    ("sink", ShapeKind::Ellipse, [180, 184, 190], [140, 144, 150]),
    ("lunch box", ShapeKind::Rectangle, [230, 200, 40], [40, 40, 120]),
    ("woven basket", ShapeKind::Ellipse, [170, 130, 70], [120, 90, 44]),
    ("orange plastic plate", ShapeKind::Ellipse, [250, 140, 0], [226, 120, 0]),
    ("yellow rubber duck", ShapeKind::Ellipse, [252, 226, 30], [250, 120, 20]),
];

pub const ARM_COLOR: Rgb<u8> = Rgb([70, 70, 76]);
pub const GRIPPER_COLOR: Rgb<u8> = Rgb([34, 34, 38]);
pub const TABLE_COLORS: [Rgb<u8>; 2] = [Rgb([214, 200, 176]), Rgb([206, 192, 168])];
pub const BACKGROUND_COLOR: Rgb<u8> = Rgb([96, 100, 104]);

pub const ARM_NOUN: &str = "robot arm";
pub const GRIPPER_NOUN: &str = "robot gripper";
pub const TABLE_NOUN: &str = "table";

/// All vocabulary nouns, longest first.
pub fn vocabulary() -> Vec<&'static str> {
    let mut nouns: Vec<&str> = VOCABULARY.iter().map(|v| v.0).collect();
    nouns.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    nouns
}

pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn sprite_for(noun: &str) -> Sprite {
    let noun = normalize(noun);
    if let Some((name, shape, body, accent)) = VOCABULARY.iter().find(|v| v.0 == noun) {
        return Sprite {
            noun: (*name).to_string(),
            shape: *shape,
            body: Rgb(*body),
            accent: Rgb(*accent),
        };
    }
    let h = digest64(noun.as_bytes());
    let channel = |shift: u32| -> u8 {
        let v = ((h >> shift) & 0xff) as u8;
        // 17..=237, odd.
        (17 + (u16::from(v) * 220 / 255) as u8) | 1
    };
    let body = Rgb([channel(0), channel(8), channel(16)]);
    let accent = Rgb([body[0] - 12, body[1] - 12, body[2] - 12]);
    let shape = if (h >> 24) & 1 == 0 {
        ShapeKind::Rectangle
    } else {
        ShapeKind::Ellipse
    };
    Sprite {
        noun,
        shape,
        body,
        accent,
    }
}

/// Colours that identify a detectable noun: sprite colours, plus the fixed
/// colours of the arm, gripper and table layers.
pub fn colors_for(noun: &str) -> Vec<Rgb<u8>> {
    match normalize(noun).as_str() {
        ARM_NOUN => vec![ARM_COLOR],
        GRIPPER_NOUN => vec![GRIPPER_COLOR],
        TABLE_NOUN => TABLE_COLORS.to_vec(),
        other => sprite_for(other).colors().to_vec(),
    }
}

/// The object noun an inpainting prompt asks for.
///
/// Longest vocabulary noun contained in the prompt wins; otherwise the phrase
/// after a leading "add a/an/the" (or "picking up a") up to the first
/// locative preposition; otherwise the whole normalized prompt.
pub fn extract_object_noun(prompt: &str) -> String {
    let text = normalize(prompt);
    let padded = format!(" {text} ");
    for noun in vocabulary() {
        if padded.contains(&format!(" {noun} ")) {
            return noun.to_string();
        }
    }
    let tokens: Vec<&str> = text.split(' ').collect();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if matches!(*t, "a" | "an" | "the" | "some") {
            start = i + 1;
            break;
        }
    }
    let rest = &tokens[start.min(tokens.len())..];
    let end = rest
        .iter()
        .position(|t| matches!(*t, "on" | "in" | "into" | "near" | "at" | "inside" | "from" | "onto"))
        .unwrap_or(rest.len());
    let noun = rest[..end].join(" ");
    if noun.is_empty() {
        text
    } else {
        noun
    }
}

/// True when either noun's token set contains the other's: "empty drawer"
/// overlaps "drawer", "coke can" does not overlap "pepsi can".
pub fn token_overlap(query: &str, name: &str) -> bool {
    let q: Vec<String> = normalize(query).split(' ').map(str::to_string).collect();
    let n: Vec<String> = normalize(name).split(' ').map(str::to_string).collect();
    if q.iter().all(|t| t.is_empty()) || n.iter().all(|t| t.is_empty()) {
        return false;
    }
    n.iter().all(|t| q.contains(t)) || q.iter().all(|t| n.contains(t))
}

/// Pixels covered by `shape` drawn into `rect`.
pub fn shape_mask(height: u32, width: u32, rect: Rect, shape: ShapeKind) -> Mask {
    match shape {
        ShapeKind::Rectangle => Mask::from_rect(height, width, rect),
        ShapeKind::Ellipse => {
            let (cx, cy) = rect.center();
            let rx = f64::from(rect.w) / 2.0;
            let ry = f64::from(rect.h) / 2.0;
            Mask::from_fn(height, width, |x, y| {
                if !rect.contains(x, y) {
                    return false;
                }
                let dx = (f64::from(x) + 0.5 - cx) / rx;
                let dy = (f64::from(y) + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            })
        }
    }
}

/// Accent band rows `[start, start + height)` for a sprite in `rect`.
/// `offset` of `None` centres the band.
pub fn band_rows(rect: Rect, offset: Option<u32>) -> (u32, u32) {
    let band = (rect.h / 5).max(1);
    let slack = rect.h.saturating_sub(band);
    let off = match offset {
        None => slack / 2,
        Some(o) => o % (slack + 1),
    };
    (rect.y + off, band)
}

/// Paint `sprite` into `rect`, only where `clip` is set. Returns the mask of
/// painted pixels.
pub fn paint_sprite(
    image: &mut RgbImage,
    sprite: &Sprite,
    rect: Rect,
    band_offset: Option<u32>,
    clip: Option<&Mask>,
) -> Mask {
    let (h, w) = (image.height(), image.width());
    let shape = shape_mask(h, w, rect, sprite.shape);
    let (band_start, band_h) = band_rows(rect, band_offset);
    let mut painted = Mask::empty(h, w);
    for (x, y) in shape.iter_set() {
        if clip.is_some_and(|c| !c.get(x, y)) {
            continue;
        }
        let color = if y >= band_start && y < band_start + band_h {
            sprite.accent
        } else {
            sprite.body
        };
        image.put_pixel(x, y, color);
        painted.set(x, y, true);
    }
    painted
}
