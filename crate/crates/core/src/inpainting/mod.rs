//! Two-stage text-guided inpainting: a low-resolution base edit followed by
//! super-resolution conditioned on the full-resolution original.

mod backend;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub use backend::{mock_inpaint, BaseRequest, HttpInpainter, InpaintBackend, MockCascade, SrRequest};

use crate::backend::{with_retry, BackendError, RetryPolicy};
use crate::segmentation::Mask;

#[derive(Debug, thiserror::Error)]
pub enum InpaintError {
    #[error("invalid inpaint request: {0}")]
    InvalidRequest(String),
    #[error("invalid cascade config: sr resolution {sr} is not a multiple of base resolution {base}")]
    InvalidConfig { base: u32, sr: u32 },
    #[error("{stage} reply is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        stage: &'static str,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRequest {
    pub image: RgbImage,
    pub mask: Mask,
    pub prompt: String,
    pub seed: u64,
}

impl InpaintRequest {
    pub fn validate(&self) -> Result<(), InpaintError> {
        if self.mask.size() != (self.image.height(), self.image.width()) {
            return Err(InpaintError::InvalidRequest(format!(
                "mask {:?} does not match image {}x{}",
                self.mask.size(),
                self.image.height(),
                self.image.width()
            )));
        }
        if self.prompt.trim().is_empty() {
            return Err(InpaintError::InvalidRequest("prompt is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub base_resolution: u32,
    pub sr_resolution: u32,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            base_resolution: 64,
            sr_resolution: 256,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), InpaintError> {
        if self.base_resolution == 0 || self.sr_resolution % self.base_resolution != 0 {
            return Err(InpaintError::InvalidConfig {
                base: self.base_resolution,
                sr: self.sr_resolution,
            });
        }
        Ok(())
    }

    pub fn factor(&self) -> u32 {
        self.sr_resolution / self.base_resolution
    }
}

pub fn png_b64(image: &RgbImage) -> String {
    BASE64.encode(crate::store::encode_png(image))
}

pub fn image_from_png_b64(data: &str) -> Result<RgbImage, String> {
    let bytes = BASE64.decode(data).map_err(|e| e.to_string())?;
    crate::store::decode_png(&bytes).map_err(|e| e.to_string())
}

/// Area-average downsample by an integer factor.
pub fn downsample_image(image: &RgbImage, factor: u32) -> RgbImage {
    let (w, h) = (image.width() / factor, image.height() / factor);
    let n = factor * factor;
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0u32; 3];
        for dy in 0..factor {
            for dx in 0..factor {
                let p = image.get_pixel(x * factor + dx, y * factor + dy);
                for c in 0..3 {
                    acc[c] += u32::from(p[c]);
                }
            }
        }
        // Round half up.
        Rgb(acc.map(|s| ((s + n / 2) / n) as u8))
    })
}

/// Any-hit downsample: a low-res bit is set when any pixel of its block is.
pub fn downsample_mask(mask: &Mask, factor: u32) -> Mask {
    let (h, w) = (mask.height() / factor, mask.width() / factor);
    Mask::from_fn(h, w, |x, y| {
        (0..factor).any(|dy| (0..factor).any(|dx| mask.get(x * factor + dx, y * factor + dy)))
    })
}

/// Issue the base call at `base_resolution`, then the SR call with the
/// original image, full-resolution mask and the base output. Each call is
/// retried under `retry`.
pub fn inpaint_cascade(
    backend: &dyn InpaintBackend,
    request: &InpaintRequest,
    config: &CascadeConfig,
    retry: &RetryPolicy,
) -> Result<RgbImage, InpaintError> {
    request.validate()?;
    config.validate()?;
    let sr = config.sr_resolution;
    let found = (request.image.height(), request.image.width());
    if found != (sr, sr) {
        return Err(InpaintError::InvalidRequest(format!("image is {found:?}, expected {sr}x{sr}")));
    }
    let factor = config.factor();
    let base_req = BaseRequest {
        image: downsample_image(&request.image, factor),
        mask: downsample_mask(&request.mask, factor),
        prompt: request.prompt.clone(),
        seed: request.seed,
    };
    let base_out = with_retry(retry, "inpaint/base", || backend.inpaint_base(&base_req))?;
    let b = config.base_resolution;
    let found = (base_out.height(), base_out.width());
    if found != (b, b) {
        return Err(InpaintError::DimensionMismatch {
            stage: "base",
            expected: (b, b),
            found,
        });
    }
    let sr_req = SrRequest {
        image: request.image.clone(),
        low_res: base_out,
        mask: request.mask.clone(),
        prompt: request.prompt.clone(),
        seed: request.seed,
    };
    let out = with_retry(retry, "inpaint/sr", || backend.inpaint_sr(&sr_req))?;
    let found = (out.height(), out.width());
    if found != (sr, sr) {
        return Err(InpaintError::DimensionMismatch {
            stage: "sr",
            expected: (sr, sr),
            found,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OffendingPixel {
    pub x: u32,
    pub y: u32,
    /// Largest per-channel absolute difference at this pixel.
    pub diff: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LocalityReport {
    pub ok: bool,
    /// Out-of-mask pixel with the largest difference, if any pixel differs.
    pub worst: Option<OffendingPixel>,
}

/// Every `mask = 0` pixel must differ by at most `tolerance` per channel.
pub fn verify_locality(before: &RgbImage, after: &RgbImage, mask: &Mask, tolerance: u8) -> LocalityReport {
    assert_eq!(before.dimensions(), after.dimensions(), "image sizes differ");
    assert_eq!(mask.size(), (before.height(), before.width()), "mask size differs");
    let mut worst: Option<OffendingPixel> = None;
    for (x, y, a) in before.enumerate_pixels() {
        if mask.get(x, y) {
            continue;
        }
        let b = after.get_pixel(x, y);
        let diff = (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0);
        if diff > 0 && worst.is_none_or(|w| diff > w.diff) {
            worst = Some(OffendingPixel { x, y, diff });
        }
    }
    LocalityReport {
        ok: worst.is_none_or(|w| w.diff <= tolerance),
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::Rect;

    #[test]
    fn mask_downsample_is_any_hit() {
        let mut m = Mask::empty(8, 8);
        m.set(5, 2, true);
        let low = downsample_mask(&m, 4);
        assert_eq!(low.size(), (2, 2));
        assert!(low.get(1, 0));
        assert_eq!(low.count(), 1);
    }

    #[test]
    fn image_downsample_averages() {
        let img = RgbImage::from_fn(4, 4, |x, _| if x < 2 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let low = downsample_image(&img, 4);
        assert_eq!(low.get_pixel(0, 0), &Rgb([128, 128, 128]));
    }

    #[test]
    fn locality_identical_and_single_change() {
        let img = RgbImage::from_pixel(8, 8, Rgb([10, 20, 30]));
        let mask = Mask::from_rect(8, 8, Rect::new(0, 0, 2, 2));
        assert!(verify_locality(&img, &img, &mask, 0).ok);
        let mut changed = img.clone();
        changed.put_pixel(5, 6, Rgb([11, 20, 30]));
        let r = verify_locality(&img, &changed, &mask, 0);
        assert!(!r.ok);
        assert_eq!(r.worst, Some(OffendingPixel { x: 5, y: 6, diff: 1 }));
        assert!(verify_locality(&img, &changed, &mask, 2).ok);
        let mut inside = img.clone();
        inside.put_pixel(1, 1, Rgb([255, 0, 0]));
        assert!(verify_locality(&img, &inside, &mask, 0).ok);
    }

    #[test]
    fn config_validation() {
        assert!(CascadeConfig::default().validate().is_ok());
        assert_eq!(CascadeConfig::default().factor(), 4);
        assert!(CascadeConfig { base_resolution: 60, sr_resolution: 256 }.validate().is_err());
    }

    #[test]
    fn png_b64_roundtrip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8, y as u8, 7]));
        assert_eq!(image_from_png_b64(&png_b64(&img)).unwrap(), img);
    }
}
