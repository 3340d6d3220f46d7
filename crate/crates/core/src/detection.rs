//! The shared detection box type used across slicing, eval, and the pipeline.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// An axis-aligned detection in pixel coordinates, top-left origin.
///
/// `x`/`y` locate the top-left corner; `w`/`h` must be positive for the box to
/// take part in IoU. Scores live in `[0, 1]` by convention but nothing here
/// enforces that; ranking only requires that they are not NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(x: f64, y: f64, w: f64, h: f64, score: f64, class_id: u32) -> Self {
        Self { x, y, w, h, score, class_id }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection-over-union with another box. Degenerate boxes (zero or
    /// negative extent) yield 0.
    pub fn iou(&self, other: &Detection) -> f64 {
        if self.w <= 0.0 || self.h <= 0.0 || other.w <= 0.0 || other.h <= 0.0 {
            return 0.0;
        }
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }

    /// Deterministic ranking: higher score first, then larger area, then lower
    /// x, then lower y. Used by NMS and by pipeline target selection so both
    /// pick the same winner from the same candidates.
    pub fn rank_cmp(&self, other: &Detection) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| other.area().total_cmp(&self.area()))
            .then_with(|| self.x.total_cmp(&other.x))
            .then_with(|| self.y.total_cmp(&other.y))
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}
