use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{image_from_png_b64, png_b64};
use crate::backend::{BackendError, JsonClient, RetryPolicy};
use crate::palette;
use crate::segmentation::{Mask, Rle};

#[derive(Debug, Clone, PartialEq)]
pub struct BaseRequest {
    pub image: RgbImage,
    pub mask: Mask,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrRequest {
    /// Full-resolution original.
    pub image: RgbImage,
    /// Base-stage output.
    pub low_res: RgbImage,
    /// Full-resolution mask.
    pub mask: Mask,
    pub prompt: String,
    pub seed: u64,
}

pub trait InpaintBackend: Send + Sync {
    fn inpaint_base(&self, req: &BaseRequest) -> Result<RgbImage, BackendError>;
    fn inpaint_sr(&self, req: &SrRequest) -> Result<RgbImage, BackendError>;
}

/// Stamp the sprite for the prompt's object noun into the mask's bounding
/// box, clipped to the mask. Pixels outside the mask are untouched; the seed
/// picks where the sprite's accent band falls.
pub fn mock_inpaint(image: &RgbImage, mask: &Mask, prompt: &str, seed: u64) -> RgbImage {
    assert_eq!(mask.size(), (image.height(), image.width()), "mask size differs from image");
    let mut out = image.clone();
    let Some(bbox) = mask.bbox() else {
        return out;
    };
    let sprite = palette::sprite_for(&palette::extract_object_noun(prompt));
    palette::paint_sprite(&mut out, &sprite, bbox, Some((seed % 997) as u32), Some(mask));
    out
}

/// Deterministic cascade stand-in. The SR stage paints at full resolution
/// directly; the base output is only checked for shape.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockCascade {
    pub base_resolution: u32,
}

impl MockCascade {
    pub fn new(base_resolution: u32) -> Self {
        Self { base_resolution }
    }
}

impl InpaintBackend for MockCascade {
    fn inpaint_base(&self, req: &BaseRequest) -> Result<RgbImage, BackendError> {
        if req.mask.size() != (req.image.height(), req.image.width()) {
            return Err(BackendError::malformed("mock/base", "mask size differs from image", ""));
        }
        Ok(mock_inpaint(&req.image, &req.mask, &req.prompt, req.seed))
    }

    fn inpaint_sr(&self, req: &SrRequest) -> Result<RgbImage, BackendError> {
        let b = self.base_resolution;
        if b != 0 && req.low_res.dimensions() != (b, b) {
            return Err(BackendError::malformed(
                "mock/sr",
                format!("low-res input is {:?}, expected {b}x{b}", req.low_res.dimensions()),
                "",
            ));
        }
        if req.mask.size() != (req.image.height(), req.image.width()) {
            return Err(BackendError::malformed("mock/sr", "mask size differs from image", ""));
        }
        Ok(mock_inpaint(&req.image, &req.mask, &req.prompt, req.seed))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireBaseRequest {
    pub image_png_b64: String,
    pub mask_rle: Rle,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireSrRequest {
    pub image_png_b64: String,
    pub low_res_png_b64: String,
    pub mask_rle: Rle,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireImageResponse {
    pub image_png_b64: String,
}

/// `POST /v1/inpaint/base` and `POST /v1/inpaint/sr`, possibly on
/// different hosts. Retries happen in the cascade, not here.
#[derive(Debug, Clone)]
pub struct HttpInpainter {
    base: JsonClient,
    sr: JsonClient,
}

impl HttpInpainter {
    pub fn new(base_url: impl Into<String>, sr_url: impl Into<String>) -> Self {
        // The cascade owns retries; one attempt per call here.
        let once = RetryPolicy::no_backoff(1);
        let timeout = Duration::from_secs(300);
        Self {
            base: JsonClient::new(base_url, once, timeout),
            sr: JsonClient::new(sr_url, once, timeout),
        }
    }

    fn decode(client: &JsonClient, path: &str, resp: WireImageResponse) -> Result<RgbImage, BackendError> {
        image_from_png_b64(&resp.image_png_b64).map_err(|reason| {
            BackendError::malformed(format!("{}{path}", client.base_url()), reason, resp.image_png_b64)
        })
    }
}

fn unwrap_single(e: BackendError) -> BackendError {
    match e {
        BackendError::Exhausted { last, .. } => *last,
        other => other,
    }
}

impl InpaintBackend for HttpInpainter {
    fn inpaint_base(&self, req: &BaseRequest) -> Result<RgbImage, BackendError> {
        let path = "/v1/inpaint/base";
        let body = WireBaseRequest {
            image_png_b64: png_b64(&req.image),
            mask_rle: req.mask.to_rle(),
            prompt: req.prompt.clone(),
            seed: req.seed,
        };
        let resp = self.base.post(path, &body).map_err(unwrap_single)?;
        Self::decode(&self.base, path, resp)
    }

    fn inpaint_sr(&self, req: &SrRequest) -> Result<RgbImage, BackendError> {
        let path = "/v1/inpaint/sr";
        let body = WireSrRequest {
            image_png_b64: png_b64(&req.image),
            low_res_png_b64: png_b64(&req.low_res),
            mask_rle: req.mask.to_rle(),
            prompt: req.prompt.clone(),
            seed: req.seed,
        };
        let resp = self.sr.post(path, &body).map_err(unwrap_single)?;
        Self::decode(&self.sr, path, resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::Rect;
    use image::Rgb;

    #[test]
    fn empty_mask_is_identity() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8, y as u8, 3]));
        assert_eq!(mock_inpaint(&img, &Mask::empty(16, 16), "add a coke can", 1), img);
    }

    #[test]
    fn paints_only_inside_mask_and_is_deterministic() {
        let img = RgbImage::from_pixel(32, 32, Rgb([1, 2, 3]));
        let mask = Mask::from_fn(32, 32, |x, y| (x + y) % 3 == 0 && x > 4 && y > 4);
        let a = mock_inpaint(&img, &mask, "add a coke can on the counter", 9);
        let b = mock_inpaint(&img, &mask, "add a coke can on the counter", 9);
        assert_eq!(a, b);
        for (x, y, p) in a.enumerate_pixels() {
            if !mask.get(x, y) {
                assert_eq!(p, img.get_pixel(x, y));
            }
        }
        let sprite = palette::sprite_for("coke can");
        assert!(mask.iter_set().all(|(x, y)| sprite.matches(a.get_pixel(x, y))));
    }

    #[test]
    fn mock_sr_checks_low_res_shape() {
        let m = MockCascade::new(64);
        let req = SrRequest {
            image: RgbImage::new(256, 256),
            low_res: RgbImage::new(32, 32),
            mask: Mask::from_rect(256, 256, Rect::new(0, 0, 4, 4)),
            prompt: "x".into(),
            seed: 0,
        };
        assert!(matches!(m.inpaint_sr(&req), Err(BackendError::Malformed { .. })));
    }
}
