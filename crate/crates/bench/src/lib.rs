//! Shared fixtures for the benchmark targets.

use image::DynamicImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rockwatch_core::detector::{scene_generate, SceneObject, SyntheticScene};
use rockwatch_core::{Detection, GeometryConfig};

/// A full-HD conveyor frame with rocks scattered across all six tiles.
pub fn full_hd_scene() -> (DynamicImage, Vec<Detection>) {
    let mut objects = Vec::new();
    for (k, (cx, cy)) in [150.0, 400.0, 900.0, 1100.0, 1600.0]
        .iter()
        .flat_map(|&x| [150.0, 350.0, 540.0, 800.0].iter().map(move |&y| (x, y)))
        .enumerate()
    {
        objects.push(SceneObject {
            center: (cx, cy),
            radii: (10.0 + (k % 4) as f64 * 2.0, 9.0 + (k % 3) as f64 * 2.0),
            contrast: 0.55 + (k % 8) as f64 * 0.05,
            class_id: (k % 3) as u32,
        });
    }
    let scene = SyntheticScene {
        width: 1920,
        height: 1080,
        objects,
        background_texture_seed: 11,
    };
    scene_generate(&scene, 11)
}

/// A single-rock VGA frame, the shape most per-frame stages see.
pub fn vga_scene() -> DynamicImage {
    let scene = SyntheticScene {
        width: 640,
        height: 480,
        objects: vec![SceneObject {
            center: (400.0, 300.0),
            radii: (14.0, 11.0),
            contrast: 0.8,
            class_id: 0,
        }],
        background_texture_seed: 5,
    };
    scene_generate(&scene, 3).0
}

/// Overlapping boxes with mixed classes and scores, as a merge pass sees
/// them after tiled inference.
pub fn random_detections(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Detection {
            x: rng.random_range(0.0..1800.0),
            y: rng.random_range(0.0..1000.0),
            w: rng.random_range(8.0..120.0),
            h: rng.random_range(8.0..120.0),
            score: rng.random_range(0.05..1.0),
            class_id: rng.random_range(0..3),
        })
        .collect()
}

/// The reference rig: VGA camera two meters above the belt, laser offset
/// 30 cm along x.
pub fn rig() -> GeometryConfig {
    GeometryConfig::new(640, 480, 66.0, 2.0, (0.3, 0.0), false, false).expect("valid rig")
}
