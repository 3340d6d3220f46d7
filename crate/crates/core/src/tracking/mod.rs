//! Closed-loop laser designation.
//!
//! The loop aims at the target assuming the surface sits at the mount height,
//! observes where the dot actually lands via laser-on/laser-off frame
//! differencing, recovers the true surface depth from the camera ray and the
//! commanded beam, and re-solves the pose at that depth. On a locally flat
//! surface the first correction lands the dot; noise and curvature are
//! absorbed by bounded iteration.

pub mod actuator;
pub mod sim;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryConfig, GeometryError, PanTilt, PixelPoint};
use crate::raster::connected_components;

pub use actuator::{Actuator, CommandActuator, NullActuator};
pub use sim::FlatSceneRig;

/// Baseline below which the laser and camera rays are too close to triangulate.
pub const MIN_BASELINE_M: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("laser baseline {0} m is below the {MIN_BASELINE_M} m depth-estimation minimum")]
    BaselineTooSmall(f64),
    #[error("camera and laser rays are near-parallel; depth is unobservable")]
    NearParallel,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("rig: {0}")]
    Rig(String),
}

/// A located laser dot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotObservation {
    pub pixel: PixelPoint,
    pub blob_area_px: u32,
    /// Largest on/off intensity difference inside the blob, 0..255.
    pub peak_delta: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingParams {
    pub max_iters: u32,
    pub pixel_tol: f64,
    /// Depth estimates are clamped into this range (meters).
    pub depth_clamp: (f64, f64),
    /// Lower bound for the frame-difference threshold, 0..255.
    pub diff_threshold_floor: u8,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self { max_iters: 5, pixel_tol: 2.0, depth_clamp: (0.05, 50.0), diff_threshold_floor: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerStatus {
    Seeking,
    Converged,
    MaxIters,
    DotLost,
}

/// Terminal state of one tracking run. `iteration` counts applied
/// corrections; `last_error_px` is infinite until a dot is first seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub target_px: PixelPoint,
    pub pose: PanTilt,
    pub iteration: u32,
    pub status: TrackerStatus,
    pub last_error_px: f64,
}

/// The hardware (or simulated) side of the loop: move the head, capture a
/// laser-on/laser-off frame pair, and douse the laser.
pub trait TrackingRig {
    fn point(&mut self, pose: PanTilt) -> Result<(), TrackingError>;
    /// Returns (laser-on frame, laser-off frame), same dimensions.
    fn frame_pair(&mut self) -> Result<(GrayImage, GrayImage), TrackingError>;
    fn laser_off(&mut self) -> Result<(), TrackingError>;
}

/// Locates the laser dot as the largest 8-connected blob of the absolute
/// on/off difference above max(4σ, floor). Returns `None` when nothing
/// crosses the threshold.
pub fn detect_laser_dot(
    frame_on: &GrayImage,
    frame_off: &GrayImage,
    params: &TrackingParams,
) -> Result<Option<DotObservation>, TrackingError> {
    let (w, h) = frame_on.dimensions();
    if frame_off.dimensions() != (w, h) {
        let (w2, h2) = frame_off.dimensions();
        return Err(TrackingError::DimensionMismatch(w, h, w2, h2));
    }
    let n = (w as usize) * (h as usize);
    let mut diff = vec![0u8; n];
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for (d, (on, off)) in diff
        .iter_mut()
        .zip(frame_on.as_raw().iter().zip(frame_off.as_raw().iter()))
    {
        *d = on.abs_diff(*off);
        let v = *d as f64;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let sigma = (sum_sq / n as f64 - mean * mean).max(0.0).sqrt();
    let threshold = (4.0 * sigma).max(params.diff_threshold_floor as f64);
    let mask: Vec<bool> = diff.iter().map(|&d| d as f64 > threshold).collect();
    let blobs = connected_components(&mask, w, h);
    let Some(best) = blobs.iter().max_by_key(|b| b.area()) else {
        return Ok(None);
    };
    let (cx, cy) = best.centroid();
    let peak = best
        .pixels
        .iter()
        .map(|&(x, y)| diff[(y * w + x) as usize])
        .max()
        .unwrap_or(0);
    Ok(Some(DotObservation {
        pixel: PixelPoint::new(cx, cy),
        blob_area_px: best.area(),
        peak_delta: peak,
    }))
}

/// Recovers the surface depth from one dot observation.
///
/// Both the camera ray through the dot and the commanded beam are linear in
/// depth z: camera lateral position z·c, beam lateral position l₀ + z·t.
/// The dot is the same physical point, so z(c − t) = l₀, solved least-squares
/// over the two lateral components and clamped into `depth_clamp`.
pub fn estimate_depth(
    cfg: &GeometryConfig,
    pose: PanTilt,
    dot_px: PixelPoint,
    params: &TrackingParams,
) -> Result<f64, TrackingError> {
    let (lx, ly) = cfg.laser_offset_m;
    let baseline = lx.hypot(ly);
    if baseline < MIN_BASELINE_M {
        return Err(TrackingError::BaselineTooSmall(baseline));
    }
    let c = cfg.pixel_to_plane_at(dot_px, 1.0);
    let theta = pose.theta_deg.to_radians();
    let phi = pose.phi_deg.to_radians();
    let t = (theta.tan() * phi.cos(), theta.tan() * phi.sin());
    let dx = c.x - t.0;
    let dy = c.y - t.1;
    let denom = dx * dx + dy * dy;
    if denom < 1e-9 {
        return Err(TrackingError::NearParallel);
    }
    let z = (dx * lx + dy * ly) / denom;
    Ok(z.clamp(params.depth_clamp.0, params.depth_clamp.1))
}

/// One correction: estimate the depth from the observed dot, move the target
/// ray to that depth, and re-solve both axes there.
pub fn correction_step(
    cfg: &GeometryConfig,
    params: &TrackingParams,
    target_px: PixelPoint,
    pose: PanTilt,
    dot: &DotObservation,
) -> Result<PanTilt, TrackingError> {
    let depth = estimate_depth(cfg, pose, dot.pixel, params)?;
    let target_at_depth = cfg.pixel_to_plane_at(target_px, depth);
    Ok(cfg.solve_pan_tilt_at_depth(target_at_depth, depth))
}

/// Runs the full closed loop against a rig until the dot sits within
/// `pixel_tol` of the target (`Converged`), corrections are exhausted
/// (`MaxIters`), or the dot goes missing twice in a row (`DotLost`). The
/// laser is doused on every exit path; only rig transport failures surface
/// as errors.
pub fn track(
    cfg: &GeometryConfig,
    params: &TrackingParams,
    target_px: PixelPoint,
    rig: &mut dyn TrackingRig,
) -> Result<TrackerState, TrackingError> {
    let result = track_inner(cfg, params, target_px, rig);
    let off_result = rig.laser_off();
    let state = result?;
    off_result?;
    Ok(state)
}

fn track_inner(
    cfg: &GeometryConfig,
    params: &TrackingParams,
    target_px: PixelPoint,
    rig: &mut dyn TrackingRig,
) -> Result<TrackerState, TrackingError> {
    let target_plane = cfg.pixel_to_plane(target_px)?;
    let mut state = TrackerState {
        target_px,
        pose: cfg.solve_pan_tilt(target_plane),
        iteration: 0,
        status: TrackerStatus::Seeking,
        last_error_px: f64::INFINITY,
    };
    let mut consecutive_misses = 0u32;
    loop {
        rig.point(state.pose)?;
        let (on, off) = rig.frame_pair()?;
        let Some(dot) = detect_laser_dot(&on, &off, params)? else {
            consecutive_misses += 1;
            if consecutive_misses >= 2 {
                state.status = TrackerStatus::DotLost;
                return Ok(state);
            }
            continue;
        };
        consecutive_misses = 0;
        state.last_error_px =
            (dot.pixel.u - target_px.u).hypot(dot.pixel.v - target_px.v);
        if state.last_error_px <= params.pixel_tol {
            state.status = TrackerStatus::Converged;
            return Ok(state);
        }
        if state.iteration >= params.max_iters {
            state.status = TrackerStatus::MaxIters;
            return Ok(state);
        }
        // A failed depth estimate keeps the pose and burns the iteration.
        if let Ok(next) = correction_step(cfg, params, target_px, state.pose, &dot) {
            state.pose = next;
        }
        state.iteration += 1;
    }
}
