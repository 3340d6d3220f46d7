//! Contrast-limited adaptive histogram equalization.
//!
//! OpenCV-compatible formulation: the image is extended to tile-grid
//! multiples with reflect-101 borders, each tile's 256-bin histogram is
//! clipped at `max(1, floor(clip_limit * tile_area / 256))` with the excess
//! redistributed uniformly plus a stepped residual, and every output pixel
//! bilinearly interpolates the LUTs of its four surrounding tile centers.

use image::{GrayImage, Luma, Rgb, RgbImage};

use super::AugmentError;
use crate::raster::{bt601_luma, reflect101};

/// Equalizes a grayscale image adaptively. `clip_limit = None` (or an
/// infinite limit) disables contrast limiting; `tiles = (1, 1)` without a
/// clip limit is exactly global histogram equalization.
pub fn clahe_gray(
    img: &GrayImage,
    clip_limit: Option<f64>,
    tiles: (u32, u32),
) -> Result<GrayImage, AugmentError> {
    let (w, h) = img.dimensions();
    let (gx, gy) = tiles;
    if gx == 0 || gy == 0 {
        return Err(AugmentError::InvalidConfig(
            "tile grid dimensions must be nonzero".into(),
        ));
    }
    if w == 0 || h == 0 {
        return Err(AugmentError::InvalidConfig("image is empty".into()));
    }
    if gx > w || gy > h {
        return Err(AugmentError::TileGridTooLarge {
            grid_x: gx,
            grid_y: gy,
            width: w,
            height: h,
        });
    }
    if let Some(c) = clip_limit {
        if c.is_nan() || c <= 0.0 {
            return Err(AugmentError::InvalidConfig(format!(
                "clip limit must be positive, got {c}"
            )));
        }
    }
    // An infinite limit clips nothing; treat it like None.
    let clip_limit = clip_limit.filter(|c| c.is_finite());

    let ext_w = w.div_ceil(gx) * gx;
    let ext_h = h.div_ceil(gy) * gy;
    let tile_w = (ext_w / gx) as usize;
    let tile_h = (ext_h / gy) as usize;
    let area = tile_w * tile_h;

    // Histogram source: the image extended to grid multiples (reflect-101).
    let (ext_w, ext_h) = (ext_w as usize, ext_h as usize);
    let mut ext = vec![0u8; ext_w * ext_h];
    for y in 0..ext_h {
        let sy = reflect101(y as i64, h);
        for x in 0..ext_w {
            let sx = reflect101(x as i64, w);
            ext[y * ext_w + x] = img.get_pixel(sx, sy)[0];
        }
    }

    let (gxs, gys) = (gx as usize, gy as usize);
    let mut luts = vec![[0u8; 256]; gxs * gys];
    for ty in 0..gys {
        for tx in 0..gxs {
            let mut hist = [0usize; 256];
            for y in ty * tile_h..(ty + 1) * tile_h {
                let row = &ext[y * ext_w + tx * tile_w..y * ext_w + (tx + 1) * tile_w];
                for &v in row {
                    hist[v as usize] += 1;
                }
            }
            if let Some(c) = clip_limit {
                clip_histogram(&mut hist, c, area);
            }
            let scale = 255.0 / area as f64;
            let mut cdf = 0usize;
            let lut = &mut luts[ty * gxs + tx];
            for (i, &count) in hist.iter().enumerate() {
                cdf += count;
                lut[i] = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    // Tile-center bilinear blend over the original (unextended) image. The
    // fractional weights come from the unclamped tile coordinate; indices are
    // clamped so border pixels replicate the edge LUTs.
    let x_blend: Vec<(usize, usize, f64)> = (0..w)
        .map(|x| axis_blend(x, tile_w, gxs))
        .collect();
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        let (row1, row2, ya) = axis_blend(y, tile_h, gys);
        for x in 0..w {
            let (col1, col2, xa) = x_blend[x as usize];
            let p = img.get_pixel(x, y)[0] as usize;
            let tl = luts[row1 * gxs + col1][p] as f64;
            let tr = luts[row1 * gxs + col2][p] as f64;
            let bl = luts[row2 * gxs + col1][p] as f64;
            let br = luts[row2 * gxs + col2][p] as f64;
            let top = tl * (1.0 - xa) + tr * xa;
            let bot = bl * (1.0 - xa) + br * xa;
            let v = top * (1.0 - ya) + bot * ya;
            out.put_pixel(x, y, Luma([v.round().clamp(0.0, 255.0) as u8]));
        }
    }
    Ok(out)
}

/// Tile indices and blend weight for one axis position.
fn axis_blend(pos: u32, tile_size: usize, grid: usize) -> (usize, usize, f64) {
    let tf = pos as f64 / tile_size as f64 - 0.5;
    let t1 = tf.floor() as i64;
    let t2 = t1 + 1;
    let frac = tf - t1 as f64;
    let i1 = t1.max(0) as usize;
    let i2 = if t2 >= 0 && (t2 as usize) < grid {
        t2 as usize
    } else {
        i1
    };
    (i1, i2, frac)
}

/// Caps bins at the integer clip limit and redistributes the excess: an even
/// share to every bin, then the remainder one count at a time with a stride
/// of `max(256 / residual, 1)`.
fn clip_histogram(hist: &mut [usize; 256], clip_limit: f64, tile_area: usize) {
    let clip = ((clip_limit * tile_area as f64 / 256.0).max(1.0)).floor() as usize;
    let mut excess = 0usize;
    for bin in hist.iter_mut() {
        if *bin > clip {
            excess += *bin - clip;
            *bin = clip;
        }
    }
    if excess == 0 {
        return;
    }
    let batch = excess / 256;
    let mut residual = excess % 256;
    for bin in hist.iter_mut() {
        *bin += batch;
    }
    let step = 256 / residual.max(1);
    let mut i = 0;
    while i < 256 && residual > 0 {
        hist[i] += 1;
        residual -= 1;
        i += step;
    }
}

/// Color CLAHE via luminance remapping: equalize the BT.601 luma plane, then
/// scale each channel by the per-pixel luminance ratio. Hue is preserved up
/// to channel clamping; pixels with zero luminance stay black.
pub fn clahe_rgb(
    img: &RgbImage,
    clip_limit: Option<f64>,
    tiles: (u32, u32),
) -> Result<RgbImage, AugmentError> {
    let (w, h) = img.dimensions();
    let luma = GrayImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y);
        Luma([bt601_luma(p[0], p[1], p[2])])
    });
    let eq = clahe_gray(&luma, clip_limit, tiles)?;
    let out = RgbImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y);
        let y0 = luma.get_pixel(x, y)[0] as f64;
        let y1 = eq.get_pixel(x, y)[0] as f64;
        let ratio = y1 / y0.max(1.0);
        let remap = |c: u8| (c as f64 * ratio).round().clamp(0.0, 255.0) as u8;
        Rgb([remap(p[0]), remap(p[1]), remap(p[2])])
    });
    Ok(out)
}
