use serde::{Deserialize, Serialize};

use super::SegmentationError;

/// Axis-aligned pixel rectangle, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn fits_in(&self, height: u32, width: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    /// Serialized as `[x, y, w, h]` on the wire.
    pub fn to_array(self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [u32; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Binary bitmap at image resolution, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: u32,
    width: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("set", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn empty(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            bits: vec![false; (height as usize) * (width as usize)],
        }
    }

    pub fn full(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            bits: vec![true; (height as usize) * (width as usize)],
        }
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity((height as usize) * (width as usize));
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { height, width, bits }
    }

    pub fn from_bits(height: u32, width: u32, bits: Vec<bool>) -> Result<Self, SegmentationError> {
        if bits.len() != (height as usize) * (width as usize) {
            return Err(SegmentationError::SizeMismatch {
                expected: (height, width),
                found: (0, bits.len() as u32),
            });
        }
        Ok(Self { height, width, bits })
    }

    /// Mask of a rectangle, clipped to the image bounds.
    pub fn from_rect(height: u32, width: u32, rect: Rect) -> Self {
        Self::from_fn(height, width, |x, y| rect.contains(x, y))
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn size(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[(y as usize) * w + x as usize] = value;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn check_same_size(&self, other: &Mask) -> Result<(), SegmentationError> {
        if self.size() != other.size() {
            return Err(SegmentationError::SizeMismatch {
                expected: self.size(),
                found: other.size(),
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, SegmentationError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &Mask) -> Result<Mask, SegmentationError> {
        self.zip_with(other, |a, b| a && b)
    }

    /// `self AND NOT other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask, SegmentationError> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask, SegmentationError> {
        self.check_same_size(other)?;
        Ok(Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.size() == other.size() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn is_disjoint_from(&self, other: &Mask) -> bool {
        self.size() == other.size() && self.bits.iter().zip(&other.bits).all(|(a, b)| !(*a && *b))
    }

    /// Tight bounding box of the set bits, `None` for an empty mask.
    pub fn bbox(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Iterator over `(x, y)` of the set bits in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }
}
