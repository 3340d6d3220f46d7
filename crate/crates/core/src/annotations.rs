//! Dataset annotation manifests: one JSON file holding every image's boxes,
//! usable for both ground truth (no scores) and predictions (with scores).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One annotated box in pixel coordinates, top-left origin. `score` is
/// omitted for ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxRecord {
    /// Ground-truth boxes carry no score; treat them as full confidence.
    pub fn to_detection(&self) -> Detection {
        Detection::new(self.x, self.y, self.w, self.h, self.score.unwrap_or(1.0), self.class_id)
    }

    pub fn from_detection(d: &Detection) -> Self {
        Self {
            x: d.x,
            y: d.y,
            w: d.w,
            h: d.h,
            class_id: d.class_id,
            score: Some(d.score),
        }
    }
}

/// All boxes for one image, keyed by a path or bare file name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    #[serde(default)]
    pub boxes: Vec<BoxRecord>,
}

impl AnnotationRecord {
    pub fn detections(&self) -> Vec<Detection> {
        self.boxes.iter().map(BoxRecord::to_detection).collect()
    }
}

/// A whole manifest: serialized as a bare JSON array of records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet {
    pub records: Vec<AnnotationRecord>,
}

impl AnnotationSet {
    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| AnnotationError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Writes pretty-printed JSON with a trailing newline.
    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        let mut text = serde_json::to_string_pretty(self).expect("annotation set serializes");
        text.push('\n');
        fs::write(path, text).map_err(|source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn find(&self, image: &str) -> Option<&AnnotationRecord> {
        self.records.iter().find(|r| r.image == image)
    }
}
