//! Perceptual-hash near-duplicate detection for dataset cleaning.
//!
//! Images are fingerprinted with a 64-bit dHash: BT.601 luma, area-average
//! downscale to 9×8, then one bit per horizontally adjacent pair
//! (bit = 1 iff left < right), packed row-major with row 0's first pair at
//! the most significant bit. Similarity is 1 − hamming/64; grouping is the
//! transitive closure of pairs at or above the threshold.
//!
//! The downscale is computed in exact integer arithmetic: cell sums are
//! accumulated over scaled pixel overlaps, and because every cell spans the
//! same scaled area, adjacent cells compare by numerator alone. Equal inputs
//! therefore never flip a bit to summation order.

use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::raster::bt601_luma;

const HASH_COLS: u32 = 9;
const HASH_ROWS: u32 = 8;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("image has zero dimension")]
    EmptyImage,
    #[error("cannot read {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("i/o error scanning {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A 64-bit dHash plus the identifier of the image it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub bits: u64,
    pub source: String,
}

impl Fingerprint {
    pub fn new(bits: u64, source: impl Into<String>) -> Self {
        Self { bits, source: source.into() }
    }

    pub fn similarity(&self, other: &Fingerprint) -> f64 {
        similarity_bits(self.bits, other.bits)
    }
}

/// Fraction of agreeing bits: 1 − hamming/64.
pub fn similarity_bits(a: u64, b: u64) -> f64 {
    1.0 - (a ^ b).count_ones() as f64 / 64.0
}

/// dHash of an image. Errors on zero-dimension input.
pub fn dhash(img: &DynamicImage) -> Result<u64, DedupError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(DedupError::EmptyImage);
    }
    let rgb = img.to_rgb8();
    // cells[row][col] = Σ luma · overlap_x · overlap_y in scaled units; the
    // scaled cell area is w·h for every cell, so rows compare by sums.
    let x_spans = axis_overlaps(w, HASH_COLS);
    let y_spans = axis_overlaps(h, HASH_ROWS);
    let mut cells = [[0u64; HASH_COLS as usize]; HASH_ROWS as usize];
    for (y, row) in rgb.rows().enumerate() {
        for (x, px) in row.enumerate() {
            let luma = bt601_luma(px[0], px[1], px[2]) as u64;
            for &(cy, wy) in &y_spans[y] {
                for &(cx, wx) in &x_spans[x] {
                    cells[cy][cx] += luma * wx * wy;
                }
            }
        }
    }
    let mut bits = 0u64;
    for (row, cell_row) in cells.iter().enumerate() {
        for i in 0..(HASH_COLS - 1) as usize {
            if cell_row[i] < cell_row[i + 1] {
                bits |= 1 << (63 - (row * 8 + i));
            }
        }
    }
    Ok(bits)
}

/// Fingerprint an image, tagging it with a source identifier.
pub fn fingerprint(img: &DynamicImage, source: impl Into<String>) -> Result<Fingerprint, DedupError> {
    Ok(Fingerprint::new(dhash(img)?, source))
}

/// For each source index along an axis of length `src`, the grid cells it
/// overlaps and the integer overlap length in scaled units (source
/// coordinates × cells; cell c covers [c·src, (c+1)·src)).
fn axis_overlaps(src: u32, cells: u32) -> Vec<Vec<(usize, u64)>> {
    let src = src as u64;
    let cells_u = cells as u64;
    (0..src)
        .map(|x| {
            let lo = x * cells_u;
            let hi = lo + cells_u;
            let c_lo = lo / src;
            let c_hi = (hi - 1) / src;
            (c_lo..=c_hi)
                .map(|c| {
                    let overlap = hi.min((c + 1) * src) - lo.max(c * src);
                    (c as usize, overlap)
                })
                .collect()
        })
        .collect()
}

/// A connected component of near-duplicates. `representative` is the
/// lexicographically first member; singletons are their own group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub representative: String,
    pub members: Vec<String>,
    /// Minimum pairwise similarity inside the group; 1.0 for singletons.
    pub pairwise_min_similarity: f64,
}

/// Groups fingerprints whose pairwise similarity reaches the threshold,
/// taking the transitive closure. Every input lands in exactly one group;
/// groups are ordered by representative.
pub fn group_similar(fingerprints: &[Fingerprint], threshold: f64) -> Vec<DuplicateGroup> {
    let n = fingerprints.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if fingerprints[i].similarity(&fingerprints[j]) >= threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        components.entry(root).or_default().push(i);
    }
    let mut groups: Vec<DuplicateGroup> = components
        .into_values()
        .map(|idxs| {
            let mut members: Vec<String> =
                idxs.iter().map(|&i| fingerprints[i].source.clone()).collect();
            members.sort();
            let mut min_sim = 1.0f64;
            for (a, &i) in idxs.iter().enumerate() {
                for &j in &idxs[a + 1..] {
                    min_sim = min_sim.min(fingerprints[i].similarity(&fingerprints[j]));
                }
            }
            DuplicateGroup {
                representative: members[0].clone(),
                members,
                pairwise_min_similarity: min_sim,
            }
        })
        .collect();
    groups.sort_by(|a, b| a.representative.cmp(&b.representative));
    groups
}

/// One unreadable file found during a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanError {
    pub path: String,
    pub error: String,
}

/// A duplicate group with a keep/drop suggestion (keep the lexicographically
/// first member).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGroup {
    pub representative: String,
    pub members: Vec<String>,
    pub pairwise_min_similarity: f64,
    pub keep: String,
    pub drop: Vec<String>,
}

/// Result of scanning a directory for near-duplicates. Only groups with two
/// or more members are listed; lone images are counted as singletons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub directory: String,
    pub threshold: f64,
    pub scanned: usize,
    pub hashed: usize,
    pub singletons: usize,
    pub groups: Vec<ScanGroup>,
    pub errors: Vec<ScanError>,
}

/// Fingerprints every regular file under `dir` (recursively, in path order)
/// and groups near-duplicates. Per-file decode failures are recorded in the
/// manifest; only directory traversal failures are fatal.
pub fn scan(dir: &Path, threshold: f64) -> Result<ScanManifest, DedupError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| DedupError::Io {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    files.sort();
    let mut fingerprints = Vec::new();
    let mut errors = Vec::new();
    for path in &files {
        match image::open(path) {
            Ok(img) => match fingerprint(&img, path.display().to_string()) {
                Ok(fp) => fingerprints.push(fp),
                Err(e) => errors.push(ScanError {
                    path: path.display().to_string(),
                    error: e.to_string(),
                }),
            },
            Err(e) => errors.push(ScanError {
                path: path.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    let all_groups = group_similar(&fingerprints, threshold);
    let singletons = all_groups.iter().filter(|g| g.members.len() == 1).count();
    let groups = all_groups
        .into_iter()
        .filter(|g| g.members.len() >= 2)
        .map(|g| ScanGroup {
            keep: g.representative.clone(),
            drop: g.members.iter().skip(1).cloned().collect(),
            representative: g.representative,
            members: g.members,
            pairwise_min_similarity: g.pairwise_min_similarity,
        })
        .collect();
    Ok(ScanManifest {
        directory: dir.display().to_string(),
        threshold,
        scanned: files.len(),
        hashed: fingerprints.len(),
        singletons,
        groups,
        errors,
    })
}
