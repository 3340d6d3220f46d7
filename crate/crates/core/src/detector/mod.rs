//! The detection contract and its two in-repo implementations.
//!
//! Real models live outside this crate and attach through
//! [`external::ExternalDetector`], a child process speaking newline-delimited
//! JSON. [`synthetic`] provides a deterministic scene generator and a
//! contrast-blob stub detector that together act as a ground-truth oracle for
//! tests and simulation.

pub mod external;
pub mod synthetic;

use image::DynamicImage;
use thiserror::Error;

use crate::detection::Detection;

pub use external::{DetectorRequest, DetectorResponse, ExternalDetector, ExternalDetectorConfig, ImageTransfer};
pub use synthetic::{scene_generate, SceneObject, StubDetector, SyntheticScene};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector unavailable: {0}")]
    Unavailable(String),
    #[error("detector timed out after {0} ms")]
    Timeout(u64),
    #[error("cannot encode or decode image: {0}")]
    Image(String),
    #[error("detector i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that turns an image into detections. Implementations may hold
/// mutable state (child process handles, counters); calls are sequential.
pub trait Detector {
    fn detect(&mut self, image: &DynamicImage) -> Result<Vec<Detection>, DetectorError>;
}
