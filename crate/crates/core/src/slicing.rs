//! Deterministic tiling of large frames and slicing-aided inference.
//!
//! Frames are covered by the minimal number of fixed-size square patches per
//! axis, spread evenly (first at 0, last flush with the far edge). A
//! 1920×1080 frame with 640-px patches yields six tiles: three across with no
//! horizontal overlap, two down sharing a 200-px band. Detections from
//! individual tiles are remapped into frame coordinates and merged with
//! class-aware greedy non-maximum suppression.

use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;
use crate::detector::{Detector, DetectorError};

#[derive(Debug, Error)]
pub enum SlicingError {
    #[error("patch size must be positive")]
    ZeroPatch,
    #[error("source {width}x{height} is smaller than patch {patch}; pad first or shrink the patch")]
    SourceSmallerThanPatch { width: u32, height: u32, patch: u32 },
    #[error("image is {actual_w}x{actual_h} but the grid was planned for {expected_w}x{expected_h}")]
    DimensionMismatch { actual_w: u32, actual_h: u32, expected_w: u32, expected_h: u32 },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// One patch: offset in the source frame plus its grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
    pub row: u32,
    pub col: u32,
}

/// A full tiling plan for one source size. Tiles are stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub source_w: u32,
    pub source_h: u32,
    pub patch: u32,
    pub tiles: Vec<Tile>,
    /// Guaranteed overlap between adjacent tiles per axis (patch − largest
    /// stride); 0 when a single tile spans the axis.
    pub overlap_x_px: u32,
    pub overlap_y_px: u32,
}

/// Evenly spread offsets covering `dim` with `n = ceil(dim/patch)` patches.
fn axis_offsets(dim: u32, patch: u32) -> Vec<u32> {
    let n = dim.div_ceil(patch);
    if n <= 1 {
        return vec![0];
    }
    let stride = (dim - patch) as f64 / (n - 1) as f64;
    (0..n).map(|i| (i as f64 * stride).round() as u32).collect()
}

/// Plans the minimal even-spread tiling. Errors when the source is smaller
/// than the patch on either axis; see [`pad_to_patch`] for the padding route.
pub fn plan_tiles(source_w: u32, source_h: u32, patch: u32) -> Result<TileGrid, SlicingError> {
    if patch == 0 {
        return Err(SlicingError::ZeroPatch);
    }
    if source_w < patch || source_h < patch {
        return Err(SlicingError::SourceSmallerThanPatch {
            width: source_w,
            height: source_h,
            patch,
        });
    }
    let xs = axis_offsets(source_w, patch);
    let ys = axis_offsets(source_h, patch);
    let max_gap = |offsets: &[u32]| {
        offsets
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .map_or(0, |gap| patch - gap)
    };
    let overlap_x_px = max_gap(&xs);
    let overlap_y_px = max_gap(&ys);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y0) in ys.iter().enumerate() {
        for (col, &x0) in xs.iter().enumerate() {
            tiles.push(Tile {
                x0,
                y0,
                w: patch,
                h: patch,
                row: row as u32,
                col: col as u32,
            });
        }
    }
    Ok(TileGrid { source_w, source_h, patch, tiles, overlap_x_px, overlap_y_px })
}

/// Edge-replication padding up to at least `patch` per axis (right/bottom).
pub fn pad_to_patch(img: &DynamicImage, patch: u32) -> DynamicImage {
    let (w, h) = img.dimensions();
    if w >= patch && h >= patch {
        return img.clone();
    }
    let (nw, nh) = (w.max(patch), h.max(patch));
    let src = img.to_rgb8();
    let padded = image::RgbImage::from_fn(nw, nh, |x, y| {
        *src.get_pixel(x.min(w - 1), y.min(h - 1))
    });
    DynamicImage::ImageRgb8(padded)
}

/// Pixel-exact crops in grid order.
pub fn slice(img: &DynamicImage, grid: &TileGrid) -> Result<Vec<DynamicImage>, SlicingError> {
    let (w, h) = img.dimensions();
    if w != grid.source_w || h != grid.source_h {
        return Err(SlicingError::DimensionMismatch {
            actual_w: w,
            actual_h: h,
            expected_w: grid.source_w,
            expected_h: grid.source_h,
        });
    }
    Ok(grid
        .tiles
        .iter()
        .map(|t| img.crop_imm(t.x0, t.y0, t.w, t.h))
        .collect())
}

/// Clips boxes to each intersecting tile for training-tile export. A clipped
/// box survives in a tile iff its visible area is at least `min_visibility`
/// of the original; surviving boxes are translated to tile coordinates.
/// Output is per tile, in grid order.
pub fn slice_annotations(
    boxes: &[Detection],
    grid: &TileGrid,
    min_visibility: f64,
) -> Vec<Vec<Detection>> {
    grid.tiles
        .iter()
        .map(|tile| {
            boxes
                .iter()
                .filter_map(|b| {
                    let x0 = b.x.max(tile.x0 as f64);
                    let y0 = b.y.max(tile.y0 as f64);
                    let x1 = (b.x + b.w).min((tile.x0 + tile.w) as f64);
                    let y1 = (b.y + b.h).min((tile.y0 + tile.h) as f64);
                    let (cw, ch) = (x1 - x0, y1 - y0);
                    if cw <= 0.0 || ch <= 0.0 || cw * ch < min_visibility * b.area() {
                        return None;
                    }
                    Some(Detection {
                        x: x0 - tile.x0 as f64,
                        y: y0 - tile.y0 as f64,
                        w: cw,
                        h: ch,
                        score: b.score,
                        class_id: b.class_id,
                    })
                })
                .collect()
        })
        .collect()
}

/// Tile-local detection → frame coordinates.
pub fn remap(det: &Detection, tile: &Tile) -> Detection {
    Detection {
        x: det.x + tile.x0 as f64,
        y: det.y + tile.y0 as f64,
        ..det.clone()
    }
}

/// Greedy class-aware non-maximum suppression. Boxes are ranked by
/// descending score (ties: larger area, lower x, lower y); a box is kept iff
/// its IoU with every already-kept box of the same class stays below the
/// threshold. Output keeps rank order.
pub fn merge(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    ranked.sort_by(|a, b| a.rank_cmp(b));
    let mut kept: Vec<Detection> = Vec::new();
    for cand in ranked {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && k.iou(cand) >= iou_threshold);
        if !suppressed {
            kept.push(cand.clone());
        }
    }
    kept
}

/// Slicing-aided inference: plan, crop, detect per tile, remap, merge.
/// Sources smaller than the patch on an axis are edge-padded up to it and
/// the merged boxes clipped back to the source frame. Any tile's detector
/// failure aborts the whole frame.
pub fn sliced_inference(
    img: &DynamicImage,
    detector: &mut dyn Detector,
    patch: u32,
    iou_threshold: f64,
) -> Result<Vec<Detection>, SlicingError> {
    if patch == 0 {
        return Err(SlicingError::ZeroPatch);
    }
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Ok(Vec::new());
    }
    let padded;
    let src = if w < patch || h < patch {
        padded = pad_to_patch(img, patch);
        &padded
    } else {
        img
    };
    let (src_w, src_h) = src.dimensions();
    let grid = plan_tiles(src_w, src_h, patch)?;
    let patches = slice(src, &grid)?;
    let mut all = Vec::new();
    for (tile, patch_img) in grid.tiles.iter().zip(&patches) {
        let dets = detector.detect(patch_img)?;
        all.extend(dets.iter().map(|d| remap(d, tile)));
    }
    let clipped: Vec<Detection> = all
        .into_iter()
        .filter_map(|d| {
            let x0 = d.x.max(0.0);
            let y0 = d.y.max(0.0);
            let x1 = (d.x + d.w).min(w as f64);
            let y1 = (d.y + d.h).min(h as f64);
            (x1 > x0 && y1 > y0).then_some(Detection { x: x0, y: y0, w: x1 - x0, h: y1 - y0, ..d })
        })
        .collect();
    Ok(merge(&clipped, iou_threshold))
}
