//! Dataset augmentation: geometric and photometric transforms that keep box
//! annotations consistent with the pixels, plus a seeded randomized pipeline
//! whose every sample can be regenerated independently.

pub mod clahe;
pub mod elastic;

pub use clahe::{clahe_gray, clahe_rgb};
pub use elastic::{
    displacement_field, elastic, gaussian_kernel, warp_with_field, DisplacementField,
};

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;
use crate::raster::{mix_seeds, sample_bilinear_rgb};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("tile grid {grid_x}x{grid_y} exceeds image {width}x{height}")]
    TileGridTooLarge {
        grid_x: u32,
        grid_y: u32,
        width: u32,
        height: u32,
    },
}

/// An image together with box annotations that transforms keep aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: RgbImage,
    pub boxes: Vec<Detection>,
}

/// Randomized pipeline parameters. Probabilities are per-sample and ranges
/// are inclusive. `clahe_clip_limit = None` disables contrast limiting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rotate_small: f64,
    pub p_rotate90: f64,
    pub rotate_small_max_deg: f64,
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub clahe_clip_limit: Option<f64>,
    pub clahe_tiles: (u32, u32),
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rotate_small: 0.5,
            p_rotate90: 0.5,
            rotate_small_max_deg: 10.0,
            brightness_range: (-30.0, 30.0),
            contrast_range: (0.8, 1.2),
            clahe_clip_limit: Some(2.0),
            clahe_tiles: (8, 8),
            elastic_alpha: 30.0,
            elastic_sigma: 6.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidConfig(msg));
        for (name, p) in [
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_rotate_small", self.p_rotate_small),
            ("p_rotate90", self.p_rotate90),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !self.rotate_small_max_deg.is_finite() || self.rotate_small_max_deg < 0.0 {
            return bad(format!(
                "rotate_small_max_deg must be finite and non-negative, got {}",
                self.rotate_small_max_deg
            ));
        }
        for (name, (lo, hi)) in [
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return bad(format!("{name} must be a finite (lo, hi) with lo <= hi"));
            }
        }
        if let Some(c) = self.clahe_clip_limit {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clahe_clip_limit must be positive, got {c}"));
            }
        }
        if self.clahe_tiles.0 == 0 || self.clahe_tiles.1 == 0 {
            return bad("clahe_tiles must be nonzero".into());
        }
        if !self.elastic_alpha.is_finite() || self.elastic_alpha < 0.0 {
            return bad(format!(
                "elastic_alpha must be finite and non-negative, got {}",
                self.elastic_alpha
            ));
        }
        if !(self.elastic_sigma > 0.0 && self.elastic_sigma.is_finite()) {
            return bad(format!(
                "elastic_sigma must be finite and positive, got {}",
                self.elastic_sigma
            ));
        }
        Ok(())
    }
}

/// Mirrors left-right; a box at x keeps its width and moves to W - x - w.
pub fn hflip(a: &AnnotatedImage) -> AnnotatedImage {
    let w = a.image.width() as f64;
    AnnotatedImage {
        image: imageops::flip_horizontal(&a.image),
        boxes: a
            .boxes
            .iter()
            .map(|b| Detection {
                x: w - b.x - b.w,
                ..b.clone()
            })
            .collect(),
    }
}

/// Mirrors top-bottom; a box at y moves to H - y - h.
pub fn vflip(a: &AnnotatedImage) -> AnnotatedImage {
    let h = a.image.height() as f64;
    AnnotatedImage {
        image: imageops::flip_vertical(&a.image),
        boxes: a
            .boxes
            .iter()
            .map(|b| Detection {
                y: h - b.y - b.h,
                ..b.clone()
            })
            .collect(),
    }
}

/// Rotates by `quarter_turns` * 90 degrees clockwise. Each turn maps a box
/// (x, y, w, h) on a WxH image to (H - y - h, x, h, w) on the HxW result.
pub fn rotate90(a: &AnnotatedImage, quarter_turns: u32) -> AnnotatedImage {
    let mut out = a.clone();
    for _ in 0..quarter_turns % 4 {
        let h = out.image.height() as f64;
        out = AnnotatedImage {
            image: imageops::rotate90(&out.image),
            boxes: out
                .boxes
                .iter()
                .map(|b| Detection {
                    x: h - b.y - b.h,
                    y: b.x,
                    w: b.h,
                    h: b.w,
                    score: b.score,
                    class_id: b.class_id,
                })
                .collect(),
        };
    }
    out
}

/// Rotates about the image center by `angle_deg` with bilinear resampling and
/// reflected borders, keeping the source dimensions. Positive angles turn +x
/// toward +y (clockwise on screen with y pointing down). Boxes become the
/// clipped axis-aligned hull of their rotated corners; hulls thinner than one
/// pixel are dropped.
pub fn rotate_small(a: &AnnotatedImage, angle_deg: f64) -> AnnotatedImage {
    let (w, h) = a.image.dimensions();
    if w == 0 || h == 0 || angle_deg == 0.0 {
        return a.clone();
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut image = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Inverse map: source = center + R(-angle) * (dest - center),
            // in continuous coordinates where pixel i spans [i, i+1].
            let px = x as f64 + 0.5 - cx;
            let py = y as f64 + 0.5 - cy;
            let sx = cos * px + sin * py + cx;
            let sy = -sin * px + cos * py + cy;
            let rgb = sample_bilinear_rgb(&a.image, sx - 0.5, sy - 0.5);
            image.put_pixel(
                x,
                y,
                Rgb([
                    rgb[0].round().clamp(0.0, 255.0) as u8,
                    rgb[1].round().clamp(0.0, 255.0) as u8,
                    rgb[2].round().clamp(0.0, 255.0) as u8,
                ]),
            );
        }
    }
    let rotate_point = |px: f64, py: f64| {
        let (rx, ry) = (px - cx, py - cy);
        (cos * rx - sin * ry + cx, sin * rx + cos * ry + cy)
    };
    let boxes = a
        .boxes
        .iter()
        .filter_map(|b| {
            let corners = [
                rotate_point(b.x, b.y),
                rotate_point(b.x + b.w, b.y),
                rotate_point(b.x, b.y + b.h),
                rotate_point(b.x + b.w, b.y + b.h),
            ];
            let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let max_x = corners
                .iter()
                .map(|c| c.0)
                .fold(f64::NEG_INFINITY, f64::max);
            let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let max_y = corners
                .iter()
                .map(|c| c.1)
                .fold(f64::NEG_INFINITY, f64::max);
            let (min_x, min_y) = (min_x.max(0.0), min_y.max(0.0));
            let (max_x, max_y) = (max_x.min(w as f64), max_y.min(h as f64));
            if max_x - min_x < 1.0 || max_y - min_y < 1.0 {
                return None;
            }
            Some(Detection {
                x: min_x,
                y: min_y,
                w: max_x - min_x,
                h: max_y - min_y,
                score: b.score,
                class_id: b.class_id,
            })
        })
        .collect();
    AnnotatedImage { image, boxes }
}

/// Per-channel affine remap: out = clamp(round(contrast * p + brightness)).
/// Boxes are untouched. (1.0, 0.0) is a byte-exact identity.
pub fn brightness_contrast(a: &AnnotatedImage, contrast: f64, brightness: f64) -> AnnotatedImage {
    let map = |c: u8| (contrast * c as f64 + brightness).round().clamp(0.0, 255.0) as u8;
    let image = RgbImage::from_fn(a.image.width(), a.image.height(), |x, y| {
        let p = a.image.get_pixel(x, y);
        Rgb([map(p[0]), map(p[1]), map(p[2])])
    });
    AnnotatedImage {
        image,
        boxes: a.boxes.clone(),
    }
}

/// What one pipeline invocation actually did, for provenance sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub sample_index: u64,
    pub hflip: bool,
    pub vflip: bool,
    pub rotate_small_deg: Option<f64>,
    pub rotate90_quarter_turns: Option<u32>,
    pub contrast: f64,
    pub brightness: f64,
    pub clahe_clip_limit: Option<f64>,
    pub clahe_tiles: (u32, u32),
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub boxes_in: usize,
    pub boxes_out: usize,
}

/// Applies the randomized pipeline for one sample. The RNG stream is a pure
/// function of (config seed, sample index), so any sample regenerates in
/// isolation without replaying its predecessors. Fixed order: hflip, vflip,
/// small rotation, quarter turns, brightness/contrast, CLAHE, elastic.
pub fn apply_pipeline(
    a: &AnnotatedImage,
    cfg: &AugmentConfig,
    sample_index: u64,
) -> Result<(AnnotatedImage, SampleTrace), AugmentError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(cfg.seed, sample_index));
    let mut out = a.clone();

    let flip_h = rng.random_bool(cfg.p_hflip);
    if flip_h {
        out = hflip(&out);
    }
    let flip_v = rng.random_bool(cfg.p_vflip);
    if flip_v {
        out = vflip(&out);
    }
    let rotate_small_deg = if rng.random_bool(cfg.p_rotate_small) {
        let d = rng.random_range(-cfg.rotate_small_max_deg..=cfg.rotate_small_max_deg);
        out = rotate_small(&out, d);
        Some(d)
    } else {
        None
    };
    let rotate90_quarter_turns = if rng.random_bool(cfg.p_rotate90) {
        let k = rng.random_range(1..=3u32);
        out = rotate90(&out, k);
        Some(k)
    } else {
        None
    };
    let contrast = rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1);
    let brightness = rng.random_range(cfg.brightness_range.0..=cfg.brightness_range.1);
    out = brightness_contrast(&out, contrast, brightness);
    out.image = clahe_rgb(&out.image, cfg.clahe_clip_limit, cfg.clahe_tiles)?;
    out = elastic(&out, cfg.elastic_alpha, cfg.elastic_sigma, &mut rng);

    let trace = SampleTrace {
        sample_index,
        hflip: flip_h,
        vflip: flip_v,
        rotate_small_deg,
        rotate90_quarter_turns,
        contrast,
        brightness,
        clahe_clip_limit: cfg.clahe_clip_limit,
        clahe_tiles: cfg.clahe_tiles,
        elastic_alpha: cfg.elastic_alpha,
        elastic_sigma: cfg.elastic_sigma,
        boxes_in: a.boxes.len(),
        boxes_out: out.boxes.len(),
    };
    Ok((out, trace))
}
