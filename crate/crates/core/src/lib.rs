//! Rockwatch core — foreign-object (rock) monitoring for olive washing units.
//!
//! The toolkit covers the full device loop plus the dataset machinery around it:
//!
//! 1. **dedup** – dHash fingerprinting and near-duplicate grouping for dataset cleaning.
//! 2. **slicing** – deterministic 640×640 tiling, annotation clipping, and
//!    slicing-aided inference (per-tile detect, remap, NMS merge).
//! 3. **augment** – seeded augmentation pipeline: flips, rotations,
//!    brightness/contrast, CLAHE, and elastic deformation, with box propagation.
//! 4. **detector** – pluggable detection contract: a synthetic-scene stub for
//!    tests/simulation and a JSON-lines child-process adapter for real models.
//! 5. **geometry** – pinhole pixel↔plane mapping and pan/tilt angle solving for
//!    the laser head.
//! 6. **tracking** – closed-loop laser designation with dot detection and
//!    depth correction from on/off frame pairs.
//! 7. **eval** – IoU matching, precision/recall, and average precision.
//! 8. **pipeline** – the live loop: frame source, alert state machine, sinks,
//!    and the append-only event log.

pub mod annotations;
pub mod augment;
pub mod dedup;
pub mod detection;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod slicing;
pub mod tracking;

mod raster;

pub use detection::Detection;
pub use geometry::{GeometryConfig, PanTilt, PixelPoint, PlanePoint};
pub use slicing::{Tile, TileGrid};
