//! Internal pixel-level helpers shared by the image-facing modules.

use image::RgbImage;

/// Mixes two seeds into one RNG seed (splitmix64 finalizer over the
/// combination), so derived streams for (seed, index) pairs stay decorrelated.
pub(crate) fn mix_seeds(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// BT.601 luma with integer rounding; matches the common
/// (299R + 587G + 114B) / 1000 grayscale definition exactly.
pub(crate) fn bt601_luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Reflect an index into [0, n) without repeating the border sample
/// (…, 2, 1, 0, 1, 2, …, n−1, n−2, …).
pub(crate) fn reflect101(mut i: i64, n: u32) -> u32 {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as u32;
        }
    }
}

/// Bilinear sample of an RGB image at a sub-pixel location, pixel centers at
/// integer coordinates, reflect-101 border handling.
pub(crate) fn sample_bilinear_rgb(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = [reflect101(x0 as i64, w), reflect101(x0 as i64 + 1, w)];
    let yi = [reflect101(y0 as i64, h), reflect101(y0 as i64 + 1, h)];
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p00 = img.get_pixel(xi[0], yi[0])[c] as f64;
        let p10 = img.get_pixel(xi[1], yi[0])[c] as f64;
        let p01 = img.get_pixel(xi[0], yi[1])[c] as f64;
        let p11 = img.get_pixel(xi[1], yi[1])[c] as f64;
        let top = p00 + (p10 - p00) * fx;
        let bot = p01 + (p11 - p01) * fx;
        *o = top + (bot - top) * fy;
    }
    out
}

/// A connected set of mask pixels.
#[derive(Debug, Clone)]
pub(crate) struct Blob {
    pub pixels: Vec<(u32, u32)>,
}

impl Blob {
    pub fn area(&self) -> u32 {
        self.pixels.len() as u32
    }

    /// Mean of pixel centers, i.e. (x + 0.5, y + 0.5) averaged.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sx, sy) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64 + 0.5, sy + y as f64 + 0.5));
        (sx / n, sy / n)
    }

    /// Inclusive pixel bounds (min_x, min_y, max_x, max_y).
    pub fn bounds(&self) -> (u32, u32, u32, u32) {
        let mut it = self.pixels.iter();
        let &(x0, y0) = it.next().expect("blob is never empty");
        it.fold((x0, y0, x0, y0), |(ax, ay, bx, by), &(x, y)| {
            (ax.min(x), ay.min(y), bx.max(x), by.max(y))
        })
    }
}

/// 8-connected components of a boolean mask in row-major order, blobs in
/// scan order of their first pixel.
pub(crate) fn connected_components(mask: &[bool], width: u32, height: u32) -> Vec<Blob> {
    assert_eq!(mask.len(), (width as usize) * (height as usize));
    let w = width as i64;
    let h = height as i64;
    let mut visited = vec![false; mask.len()];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(idx) = stack.pop() {
            let x = (idx % width as usize) as i64;
            let y = (idx / width as usize) as i64;
            pixels.push((x as u32, y as u32));
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let nidx = (ny * w + nx) as usize;
                    if mask[nidx] && !visited[nidx] {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        blobs.push(Blob { pixels });
    }
    blobs
}
