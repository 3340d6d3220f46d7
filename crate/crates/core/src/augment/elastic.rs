//! Random elastic deformation driven by a Gaussian-smoothed displacement
//! field, with boxes following their displaced corners.

use image::{Rgb, RgbImage};
use rand::Rng;

use super::AnnotatedImage;
use crate::detection::Detection;
use crate::raster::{reflect101, sample_bilinear_rgb};

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)` per side.
/// `sigma` must be positive.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    kernel
}

/// Dense per-pixel displacement in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub width: u32,
    pub height: u32,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DisplacementField {
    /// Bilinear sample at a continuous point, clamped to the field borders.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let w = self.width as usize;
        let h = self.height as usize;
        let cx = x.clamp(0.0, (w - 1) as f64);
        let cy = y.clamp(0.0, (h - 1) as f64);
        let x0 = cx.floor() as usize;
        let y0 = cy.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = cx - x0 as f64;
        let fy = cy - y0 as f64;
        let lerp = |v: &[f64]| {
            let top = v[y0 * w + x0] * (1.0 - fx) + v[y0 * w + x1] * fx;
            let bot = v[y1 * w + x0] * (1.0 - fx) + v[y1 * w + x1] * fx;
            top * (1.0 - fy) + bot * fy
        };
        (lerp(&self.dx), lerp(&self.dy))
    }
}

/// Draws per-pixel uniform [-1, 1] noise for each axis (the full x plane
/// first, then the y plane, row-major), blurs each plane with a separable
/// Gaussian under reflect-101 borders, and scales by `alpha`. Displacement
/// magnitudes never exceed `alpha`.
pub fn displacement_field<R: Rng + ?Sized>(
    width: u32,
    height: u32,
    alpha: f64,
    sigma: f64,
    rng: &mut R,
) -> DisplacementField {
    let n = width as usize * height as usize;
    let mut dx: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut dy: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let kernel = gaussian_kernel(sigma);
    blur_separable(&mut dx, width as usize, height as usize, &kernel);
    blur_separable(&mut dy, width as usize, height as usize, &kernel);
    for v in dx.iter_mut().chain(dy.iter_mut()) {
        *v *= alpha;
    }
    DisplacementField {
        width,
        height,
        dx,
        dy,
    }
}

fn blur_separable(buf: &mut [f64], w: usize, h: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0f64; buf.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let sx = reflect101(x as i64 + k as i64 - radius, w as u32) as usize;
                acc += buf[y * w + sx] * kw;
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let sy = reflect101(y as i64 + k as i64 - radius, h as u32) as usize;
                acc += tmp[sy * w + x] * kw;
            }
            buf[y * w + x] = acc;
        }
    }
}

/// Warps `a` by an explicit field: `out(q) = in(q - d(q))` with bilinear
/// sampling and reflected borders. Each box corner `c` moves to `c + d(c)`;
/// the box becomes the axis-aligned hull of its displaced corners, clipped to
/// the frame, and is dropped if thinner than one pixel afterwards.
pub fn warp_with_field(a: &AnnotatedImage, field: &DisplacementField) -> AnnotatedImage {
    let (w, h) = a.image.dimensions();
    assert_eq!(
        (field.width, field.height),
        (w, h),
        "field dimensions must match the image"
    );
    let mut image = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let sx = x as f64 - field.dx[i];
            let sy = y as f64 - field.dy[i];
            let rgb = sample_bilinear_rgb(&a.image, sx, sy);
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
    let boxes = a
        .boxes
        .iter()
        .filter_map(|b| displace_box(b, field, w, h))
        .collect();
    AnnotatedImage { image, boxes }
}

fn displace_box(b: &Detection, field: &DisplacementField, w: u32, h: u32) -> Option<Detection> {
    let corners = [
        (b.x, b.y),
        (b.x + b.w, b.y),
        (b.x, b.y + b.h),
        (b.x + b.w, b.y + b.h),
    ];
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for (cx, cy) in corners {
        let (dx, dy) = field.sample(cx, cy);
        min_x = min_x.min(cx + dx);
        max_x = max_x.max(cx + dx);
        min_y = min_y.min(cy + dy);
        max_y = max_y.max(cy + dy);
    }
    let min_x = min_x.max(0.0);
    let min_y = min_y.max(0.0);
    let max_x = max_x.min(w as f64);
    let max_y = max_y.min(h as f64);
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
}

/// Randomized elastic deformation. `alpha = 0` is the identity; otherwise a
/// fresh displacement field is drawn from `rng` and applied via
/// [`warp_with_field`].
pub fn elastic<R: Rng + ?Sized>(
    a: &AnnotatedImage,
    alpha: f64,
    sigma: f64,
    rng: &mut R,
) -> AnnotatedImage {
    let (w, h) = a.image.dimensions();
    if alpha == 0.0 || w == 0 || h == 0 {
        return a.clone();
    }
    let field = displacement_field(w, h, alpha, sigma, rng);
    warp_with_field(a, &field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            Rgb([
                ((x * 3 + y) % 256) as u8,
                ((x + y * 5) % 256) as u8,
                ((x * x + y) % 256) as u8,
            ])
        })
    }

    #[test]
    fn kernel_is_normalized_symmetric_and_peaked() {
        let k = gaussian_kernel(2.5);
        assert_eq!(k.len(), 2 * 8 + 1);
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert_eq!(k[i].to_bits(), k[k.len() - 1 - i].to_bits(), "tap {i}");
        }
        assert!(k[8] > k[7] && k[7] > k[0]);
    }

    #[test]
    fn alpha_zero_is_identity() {
        let a = AnnotatedImage {
            image: test_image(40, 30),
            boxes: vec![Detection::new(3.0, 4.0, 10.0, 8.0, 0.9, 1)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = elastic(&a, 0.0, 4.0, &mut rng);
        assert_eq!(out, a);
    }

    #[test]
    fn field_magnitude_is_bounded_by_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = displacement_field(50, 40, 7.0, 3.0, &mut rng);
        for v in f.dx.iter().chain(f.dy.iter()) {
            assert!(v.abs() <= 7.0 + 1e-9);
        }
    }

    /// The smoothed uniform noise is near-Gaussian with per-axis variance
    /// (1/3) * (sum of squared 1-D taps)^2, so the mean displacement
    /// magnitude follows the Rayleigh expectation sigma_c * sqrt(pi/2).
    #[test]
    fn mean_displacement_matches_rayleigh_expectation() {
        let (w, h, alpha, sigma) = (160u32, 120u32, 30.0, 6.0);
        let kernel = gaussian_kernel(sigma);
        let sq: f64 = kernel.iter().map(|k| k * k).sum();
        let sigma_c = alpha * sq / 3.0f64.sqrt();
        let expected = sigma_c * (std::f64::consts::PI / 2.0).sqrt();

        let margin = (3.0 * sigma).ceil() as u32;
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = displacement_field(w, h, alpha, sigma, &mut rng);
            for y in margin..h - margin {
                for x in margin..w - margin {
                    let i = (y * w + x) as usize;
                    total += (f.dx[i] * f.dx[i] + f.dy[i] * f.dy[i]).sqrt();
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        assert!(
            (mean - expected).abs() <= 0.10 * expected,
            "mean {mean:.4} vs expected {expected:.4}"
        );
    }

    #[test]
    fn constant_field_shifts_content_and_boxes() {
        let a = AnnotatedImage {
            image: test_image(60, 40),
            boxes: vec![
                Detection::new(10.0, 12.0, 8.0, 6.0, 0.8, 0),
                // Hugs the right edge: a +5 px shift pushes it out entirely.
                Detection::new(55.5, 10.0, 4.5, 6.0, 0.7, 0),
            ],
        };
        let n = (60 * 40) as usize;
        let field = DisplacementField {
            width: 60,
            height: 40,
            dx: vec![5.0; n],
            dy: vec![-3.0; n],
        };
        let out = warp_with_field(&a, &field);
        // Interior pixels: out(x, y) = in(x - 5, y + 3), sampled exactly on
        // the integer grid.
        for y in 0..37u32 {
            for x in 5..60u32 {
                assert_eq!(
                    out.image.get_pixel(x, y),
                    a.image.get_pixel(x - 5, y + 3),
                    "at ({x},{y})"
                );
            }
        }
        assert_eq!(out.boxes.len(), 1);
        let b = &out.boxes[0];
        assert_eq!((b.x, b.y, b.w, b.h), (15.0, 9.0, 8.0, 6.0));
        assert_eq!((b.score, b.class_id), (0.8, 0));
    }

    #[test]
    fn seeded_runs_are_reproducible_and_seeds_differ() {
        let a = AnnotatedImage {
            image: test_image(48, 36),
            boxes: vec![Detection::new(8.0, 8.0, 12.0, 12.0, 1.0, 2)],
        };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            elastic(&a, 10.0, 4.0, &mut rng)
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).image, run(6).image);
    }

    #[test]
    fn field_sampling_interpolates_and_clamps() {
        let field = DisplacementField {
            width: 2,
            height: 2,
            dx: vec![0.0, 4.0, 0.0, 4.0],
            dy: vec![1.0, 1.0, 3.0, 3.0],
        };
        let (dx, dy) = field.sample(0.5, 0.5);
        assert!((dx - 2.0).abs() < 1e-12 && (dy - 2.0).abs() < 1e-12);
        // Out-of-range points clamp to the border values.
        assert_eq!(field.sample(-5.0, 0.0), (0.0, 1.0));
        assert_eq!(field.sample(9.0, 9.0), (4.0, 3.0));
    }
}
