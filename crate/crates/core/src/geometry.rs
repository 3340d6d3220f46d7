//! Pixel↔plane projection and pan/tilt solving for the laser head.
//!
//! Model: pinhole camera with square pixels and the principal point at the
//! image center, looking straight down at the washing-unit surface, which is
//! treated as a plane at distance `mount_height_m`. The laser pivot sits in
//! the camera plane at `laser_offset_m` (z_l = 0), pan rotating about the
//! vertical axis and tilt measured from straight down.
//!
//! All angle math is in degrees at the API surface; servo commands are the
//! degrees normalized by 90.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry config: {0}")]
    InvalidConfig(String),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("plane point ({x} m, {y} m) projects outside the image")]
    ProjectsOutsideImage { x: f64, y: f64 },
    #[error("pose angle {0}° exceeds the ±90° servo range")]
    PoseOutOfRange(f64),
    #[error("normalized command {0} outside [-1, 1]")]
    CommandOutOfRange(f64),
    #[error("beam at tilt {0}° never reaches the surface")]
    BeamMissesSurface(f64),
    #[error("surface depth {0} m is not positive")]
    InvalidDepth(f64),
}

/// A sub-pixel image coordinate, top-left origin, u rightward, v downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A point on the reference plane, meters, camera principal axis at (0, 0).
/// x grows with pixel u, y with pixel v.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Pan/tilt pose in degrees. Canonical poses keep both angles in [−90, 90];
/// any pose can be brought there because (φ, θ) and (φ∓180°, −θ) aim the beam
/// the same way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanTilt {
    pub phi_deg: f64,
    pub theta_deg: f64,
}

impl PanTilt {
    pub fn new(phi_deg: f64, theta_deg: f64) -> Self {
        Self { phi_deg, theta_deg }
    }

    /// Folds the pose into the servo range via the antipodal identity.
    pub fn canonical(self) -> PanTilt {
        let mut phi = self.phi_deg;
        let mut theta = self.theta_deg;
        while phi > 90.0 {
            phi -= 180.0;
            theta = -theta;
        }
        while phi < -90.0 {
            phi += 180.0;
            theta = -theta;
        }
        PanTilt { phi_deg: phi, theta_deg: theta }
    }

    pub fn is_canonical(&self) -> bool {
        self.phi_deg.abs() <= 90.0 && self.theta_deg.abs() <= 90.0
    }
}

/// Where a ray-cast beam lands: always a plane point; a pixel only when the
/// landing point projects inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub plane: PlanePoint,
    pub pixel: Option<PixelPoint>,
}

/// Camera/laser mounting parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub image_width_px: u32,
    pub image_height_px: u32,
    pub fov_h_deg: f64,
    pub mount_height_m: f64,
    /// Laser pivot (x_l, y_l) in plane coordinates; z_l is 0 by construction.
    pub laser_offset_m: (f64, f64),
    pub pan_invert: bool,
    pub tilt_invert: bool,
}

impl GeometryConfig {
    pub fn new(
        image_width_px: u32,
        image_height_px: u32,
        fov_h_deg: f64,
        mount_height_m: f64,
        laser_offset_m: (f64, f64),
        pan_invert: bool,
        tilt_invert: bool,
    ) -> Result<Self, GeometryError> {
        if image_width_px == 0 || image_height_px == 0 {
            return Err(GeometryError::InvalidConfig("image dimensions must be positive".into()));
        }
        if !(fov_h_deg > 0.0 && fov_h_deg < 180.0) {
            return Err(GeometryError::InvalidConfig(format!(
                "fov_h_deg must be in (0, 180), got {fov_h_deg}"
            )));
        }
        if mount_height_m <= 0.0 || mount_height_m.is_nan() {
            return Err(GeometryError::InvalidConfig(format!(
                "mount_height_m must be positive, got {mount_height_m}"
            )));
        }
        if !laser_offset_m.0.is_finite() || !laser_offset_m.1.is_finite() {
            return Err(GeometryError::InvalidConfig("laser offset must be finite".into()));
        }
        Ok(Self {
            image_width_px,
            image_height_px,
            fov_h_deg,
            mount_height_m,
            laser_offset_m,
            pan_invert,
            tilt_invert,
        })
    }

    /// Focal length in pixels: f = (W/2) / tan(fov_h/2).
    pub fn focal_px(&self) -> f64 {
        (self.image_width_px as f64 / 2.0) / (self.fov_h_deg.to_radians() / 2.0).tan()
    }

    fn in_bounds(&self, p: PixelPoint) -> bool {
        p.u >= 0.0
            && p.u < self.image_width_px as f64
            && p.v >= 0.0
            && p.v < self.image_height_px as f64
    }

    /// Maps an in-bounds pixel to the plane at the mount height.
    pub fn pixel_to_plane(&self, p: PixelPoint) -> Result<PlanePoint, GeometryError> {
        if !self.in_bounds(p) {
            return Err(GeometryError::PixelOutOfBounds {
                u: p.u,
                v: p.v,
                width: self.image_width_px,
                height: self.image_height_px,
            });
        }
        Ok(self.pixel_to_plane_at(p, self.mount_height_m))
    }

    /// Maps a pixel along its camera ray to the horizontal plane at `depth_m`.
    /// No bounds check: used for rays, not stored coordinates.
    pub fn pixel_to_plane_at(&self, p: PixelPoint, depth_m: f64) -> PlanePoint {
        let f = self.focal_px();
        PlanePoint {
            x: (p.u - self.image_width_px as f64 / 2.0) * depth_m / f,
            y: (p.v - self.image_height_px as f64 / 2.0) * depth_m / f,
        }
    }

    /// Inverse of [`pixel_to_plane`](Self::pixel_to_plane); errors when the
    /// point projects outside the image. Coordinates that overshoot an image
    /// edge by float rounding (< 1e-9 px) snap back onto it so boundary
    /// pixels survive the round trip.
    pub fn plane_to_pixel(&self, pt: PlanePoint) -> Result<PixelPoint, GeometryError> {
        let raw = self.plane_to_pixel_at(pt, self.mount_height_m);
        let p = PixelPoint {
            u: snap_into(raw.u, self.image_width_px as f64),
            v: snap_into(raw.v, self.image_height_px as f64),
        };
        if !self.in_bounds(p) {
            return Err(GeometryError::ProjectsOutsideImage { x: pt.x, y: pt.y });
        }
        Ok(p)
    }

    /// Projects a point on the plane at `depth_m` into pixel coordinates,
    /// without a bounds check.
    pub fn plane_to_pixel_at(&self, pt: PlanePoint, depth_m: f64) -> PixelPoint {
        let f = self.focal_px();
        PixelPoint {
            u: pt.x * f / depth_m + self.image_width_px as f64 / 2.0,
            v: pt.y * f / depth_m + self.image_height_px as f64 / 2.0,
        }
    }

    /// Pan/tilt for a target on the plane at the mount height.
    pub fn solve_pan_tilt(&self, target: PlanePoint) -> PanTilt {
        self.solve_pan_tilt_at_depth(target, self.mount_height_m)
    }

    /// Pan/tilt for a target on the horizontal plane at `depth_m`, with the
    /// target's (x, y) expressed at that plane. φ = atan2(Δy, Δx),
    /// θ = atan(d / depth), then canonicalized. A target under the laser
    /// pivot (d < 1e-12 m) returns (0, 0): the vertical beam hits it for any
    /// pan.
    pub fn solve_pan_tilt_at_depth(&self, target: PlanePoint, depth_m: f64) -> PanTilt {
        let dx = target.x - self.laser_offset_m.0;
        let dy = target.y - self.laser_offset_m.1;
        let d = dx.hypot(dy);
        if d < 1e-12 {
            return PanTilt::new(0.0, 0.0);
        }
        let phi = dy.atan2(dx).to_degrees();
        let theta = (d / depth_m).atan().to_degrees();
        PanTilt::new(phi, theta).canonical()
    }

    /// Distance on the plane from the laser pivot's projection to the target.
    pub fn radial_distance(&self, target: PlanePoint) -> f64 {
        radial_distance(self.laser_offset_m, target)
    }

    /// Degrees → normalized servo commands: n = deg/90, sign-flipped per the
    /// invert flags. The pose must be canonical.
    pub fn normalize(&self, pose: PanTilt) -> Result<(f64, f64), GeometryError> {
        for deg in [pose.phi_deg, pose.theta_deg] {
            if deg.abs() > 90.0 || deg.is_nan() {
                return Err(GeometryError::PoseOutOfRange(deg));
            }
        }
        let mut n_pan = pose.phi_deg / 90.0;
        let mut n_tilt = pose.theta_deg / 90.0;
        if self.pan_invert {
            n_pan = -n_pan;
        }
        if self.tilt_invert {
            n_tilt = -n_tilt;
        }
        Ok((n_pan, n_tilt))
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, n_pan: f64, n_tilt: f64) -> Result<PanTilt, GeometryError> {
        for n in [n_pan, n_tilt] {
            if n.abs() > 1.0 || n.is_nan() {
                return Err(GeometryError::CommandOutOfRange(n));
            }
        }
        let pan_sign = if self.pan_invert { -1.0 } else { 1.0 };
        let tilt_sign = if self.tilt_invert { -1.0 } else { 1.0 };
        Ok(PanTilt::new(pan_sign * n_pan * 90.0, tilt_sign * n_tilt * 90.0))
    }

    /// Forward model: where does the beam at `pose` strike the horizontal
    /// plane at `surface_depth_m`? The beam leaves (x_l, y_l, 0) with
    /// direction (sinθ·cosφ, sinθ·sinφ) laterally and cosθ toward the
    /// surface, so the lateral displacement is depth·tanθ.
    pub fn ray_cast(&self, pose: PanTilt, surface_depth_m: f64) -> Result<RayHit, GeometryError> {
        if surface_depth_m <= 0.0 || surface_depth_m.is_nan() {
            return Err(GeometryError::InvalidDepth(surface_depth_m));
        }
        let theta = pose.theta_deg.to_radians();
        if theta.cos().abs() < 1e-12 || pose.theta_deg.abs() >= 90.0 {
            return Err(GeometryError::BeamMissesSurface(pose.theta_deg));
        }
        let phi = pose.phi_deg.to_radians();
        let r = surface_depth_m * theta.tan();
        let plane = PlanePoint {
            x: self.laser_offset_m.0 + r * phi.cos(),
            y: self.laser_offset_m.1 + r * phi.sin(),
        };
        let pixel = self.plane_to_pixel_at(plane, surface_depth_m);
        let pixel = if self.in_bounds(pixel) { Some(pixel) } else { None };
        Ok(RayHit { plane, pixel })
    }
}

/// Euclidean distance between the laser pivot's plane projection and a target.
pub fn radial_distance(laser: (f64, f64), target: PlanePoint) -> f64 {
    (target.x - laser.0).hypot(target.y - laser.1)
}

/// Pulls a coordinate that left [0, size) by under a nanopixel back inside.
fn snap_into(x: f64, size: f64) -> f64 {
    if x < 0.0 && x > -1e-9 {
        0.0
    } else if x >= size && x < size + 1e-9 {
        size.next_down()
    } else {
        x
    }
}
