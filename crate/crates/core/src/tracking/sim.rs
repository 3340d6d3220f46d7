//! A simulated rig: flat surface at a configurable depth, ideal servos, and
//! a rendered laser dot. Serves as the oracle for the closed-loop tests and
//! backs the `simulate` CLI command.

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TrackingError, TrackingRig};
use crate::geometry::{GeometryConfig, PanTilt};

const BACKGROUND_VALUE: u8 = 30;
const DOT_RADIUS_PX: f64 = 2.5;

/// Flat-scene simulator. The surface lies at `surface_depth_m` (which may
/// differ from the mount height the solver assumes); the dot is rendered
/// where the commanded beam actually strikes that surface, optionally
/// jittered by uniform per-axis noise.
pub struct FlatSceneRig {
    cfg: GeometryConfig,
    pub surface_depth_m: f64,
    noise_px: f64,
    laser_visible: bool,
    rng: ChaCha8Rng,
    pose: Option<PanTilt>,
    background: GrayImage,
    /// Every pose the loop commanded, in order.
    pub pose_log: Vec<PanTilt>,
    pub frame_pairs_served: u32,
    pub laser_doused: bool,
}

impl FlatSceneRig {
    pub fn new(cfg: GeometryConfig, surface_depth_m: f64) -> Self {
        let background = GrayImage::from_pixel(
            cfg.image_width_px,
            cfg.image_height_px,
            image::Luma([BACKGROUND_VALUE]),
        );
        Self {
            cfg,
            surface_depth_m,
            noise_px: 0.0,
            laser_visible: true,
            rng: ChaCha8Rng::seed_from_u64(0),
            pose: None,
            background,
            pose_log: Vec::new(),
            frame_pairs_served: 0,
            laser_doused: false,
        }
    }

    /// Jitter the rendered dot center by uniform ±noise_px per axis.
    pub fn with_noise(mut self, noise_px: f64, seed: u64) -> Self {
        self.noise_px = noise_px;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    /// A rig whose laser never produces a visible dot.
    pub fn with_laser_hidden(mut self) -> Self {
        self.laser_visible = false;
        self
    }

    fn render_on_frame(&mut self) -> GrayImage {
        let mut frame = self.background.clone();
        if !self.laser_visible {
            return frame;
        }
        let Some(pose) = self.pose else { return frame };
        let Ok(hit) = self.cfg.ray_cast(pose, self.surface_depth_m) else {
            return frame;
        };
        let mut center = self
            .cfg
            .plane_to_pixel_at(hit.plane, self.surface_depth_m);
        if self.noise_px > 0.0 {
            center.u += self.rng.random_range(-self.noise_px..=self.noise_px);
            center.v += self.rng.random_range(-self.noise_px..=self.noise_px);
        }
        let (w, h) = frame.dimensions();
        let x_lo = (center.u - DOT_RADIUS_PX).floor().max(0.0) as i64;
        let x_hi = (center.u + DOT_RADIUS_PX).ceil() as i64;
        let y_lo = (center.v - DOT_RADIUS_PX).floor().max(0.0) as i64;
        let y_hi = (center.v + DOT_RADIUS_PX).ceil() as i64;
        for y in y_lo..=y_hi.min(h as i64 - 1) {
            for x in x_lo..=x_hi.min(w as i64 - 1) {
                if x < 0 || y < 0 {
                    continue;
                }
                let du = x as f64 + 0.5 - center.u;
                let dv = y as f64 + 0.5 - center.v;
                if du * du + dv * dv <= DOT_RADIUS_PX * DOT_RADIUS_PX {
                    frame.put_pixel(x as u32, y as u32, image::Luma([255]));
                }
            }
        }
        frame
    }
}

impl TrackingRig for FlatSceneRig {
    fn point(&mut self, pose: PanTilt) -> Result<(), TrackingError> {
        self.pose = Some(pose);
        self.pose_log.push(pose);
        Ok(())
    }

    fn frame_pair(&mut self) -> Result<(GrayImage, GrayImage), TrackingError> {
        self.frame_pairs_served += 1;
        Ok((self.render_on_frame(), self.background.clone()))
    }

    fn laser_off(&mut self) -> Result<(), TrackingError> {
        self.laser_doused = true;
        Ok(())
    }
}
