//! Deterministic synthetic scenes and the contrast-blob stub detector.
//!
//! The generator renders a mid-gray washing-surface texture (smooth value
//! noise, base 90, amplitude ±18) and plants bright elliptical objects whose
//! brightness grows with a per-object contrast in [0, 1]. The stub detector
//! inverts exactly that construction: pixels well above the global median are
//! grouped into blobs and scored by mean brightness excess. Planted objects
//! with contrast ≥ 0.5 and radii ≥ 4 px sit far above the noise band, which
//! is what makes the pair usable as a precision/recall oracle.

use image::{DynamicImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Detector, DetectorError};
use crate::detection::Detection;
use crate::raster::{bt601_luma, connected_components};

const BACKGROUND_BASE: f64 = 90.0;
const NOISE_AMPLITUDE: f64 = 18.0;
const NOISE_LATTICE_PX: u32 = 24;
const CONTRAST_SCALE: f64 = 160.0;

/// One planted object: an axis-aligned ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    /// 0 = invisible against the background, 1 = maximal brightness step.
    pub contrast: f64,
    pub class_id: u32,
}

/// A renderable scene description. Objects must lie inside the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    pub background_texture_seed: u64,
}

use crate::raster::mix_seeds;

/// Renders a scene deterministically. Ground truth is the exact bounding box
/// of every planted ellipse, score 1.0.
pub fn scene_generate(scene: &SyntheticScene, seed: u64) -> (DynamicImage, Vec<Detection>) {
    let (w, h) = (scene.width, scene.height);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(scene.background_texture_seed, seed));
    // Smooth value noise: random lattice, bilinear interpolation between knots.
    let knots_x = w / NOISE_LATTICE_PX + 2;
    let knots_y = h / NOISE_LATTICE_PX + 2;
    let lattice: Vec<f64> = (0..knots_x * knots_y)
        .map(|_| rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE))
        .collect();
    let noise_at = |x: u32, y: u32| -> f64 {
        let fx = x as f64 / NOISE_LATTICE_PX as f64;
        let fy = y as f64 / NOISE_LATTICE_PX as f64;
        let (ix, iy) = (fx.floor() as u32, fy.floor() as u32);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let at = |i: u32, j: u32| lattice[(j * knots_x + i) as usize];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    };
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let v = (BACKGROUND_BASE + noise_at(x, y)).round().clamp(0.0, 255.0) as u8;
        image::Rgb([v, v, v])
    });
    let mut truth = Vec::with_capacity(scene.objects.len());
    for obj in &scene.objects {
        let (cx, cy) = obj.center;
        let (rx, ry) = obj.radii;
        let value = (BACKGROUND_BASE + obj.contrast * CONTRAST_SCALE).round().clamp(0.0, 255.0) as u8;
        let x_lo = (cx - rx).floor().max(0.0) as u32;
        let x_hi = (cx + rx).ceil().min(w as f64 - 1.0) as u32;
        let y_lo = (cy - ry).floor().max(0.0) as u32;
        let y_hi = (cy + ry).ceil().min(h as f64 - 1.0) as u32;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let nx = (x as f64 + 0.5 - cx) / rx;
                let ny = (y as f64 + 0.5 - cy) / ry;
                if nx * nx + ny * ny <= 1.0 {
                    img.put_pixel(x, y, image::Rgb([value, value, value]));
                }
            }
        }
        truth.push(Detection {
            x: cx - rx,
            y: cy - ry,
            w: 2.0 * rx,
            h: 2.0 * ry,
            score: 1.0,
            class_id: obj.class_id,
        });
    }
    (DynamicImage::ImageRgb8(img), truth)
}

/// Brightness-blob detector over synthetic scenes: pixels exceeding the
/// global median luma by `delta_threshold` form 8-connected blobs; each blob
/// of at least `min_area_px` becomes a class-0 detection whose score is the
/// mean excess over the median, scaled so contrast c maps back to ≈ c.
#[derive(Debug, Clone)]
pub struct StubDetector {
    pub delta_threshold: f64,
    pub min_area_px: u32,
}

impl Default for StubDetector {
    fn default() -> Self {
        // Threshold sits above the ±18 background noise but below the
        // dimmest contrast the oracle regime promises to find.
        Self { delta_threshold: 32.0, min_area_px: 4 }
    }
}

impl Detector for StubDetector {
    fn detect(&mut self, image: &DynamicImage) -> Result<Vec<Detection>, DetectorError> {
        let rgb = image.to_rgb8();
        let (w, h) = rgb.dimensions();
        if w == 0 || h == 0 {
            return Ok(Vec::new());
        }
        let luma: Vec<u8> = rgb.pixels().map(|p| bt601_luma(p[0], p[1], p[2])).collect();
        let mut hist = [0u32; 256];
        for &v in &luma {
            hist[v as usize] += 1;
        }
        let half = (luma.len() as u32).div_ceil(2);
        let mut acc = 0u32;
        let mut median = 0u8;
        for (v, &count) in hist.iter().enumerate() {
            acc += count;
            if acc >= half {
                median = v as u8;
                break;
            }
        }
        let cut = median as f64 + self.delta_threshold;
        let mask: Vec<bool> = luma.iter().map(|&v| v as f64 > cut).collect();
        let mut dets = Vec::new();
        for blob in connected_components(&mask, w, h) {
            if blob.area() < self.min_area_px {
                continue;
            }
            let (min_x, min_y, max_x, max_y) = blob.bounds();
            let mean_delta = blob
                .pixels
                .iter()
                .map(|&(x, y)| luma[(y * w + x) as usize] as f64 - median as f64)
                .sum::<f64>()
                / blob.area() as f64;
            dets.push(Detection {
                x: min_x as f64,
                y: min_y as f64,
                w: (max_x - min_x + 1) as f64,
                h: (max_y - min_y + 1) as f64,
                score: (mean_delta / CONTRAST_SCALE).clamp(0.0, 1.0),
                class_id: 0,
            });
        }
        Ok(dets)
    }
}
