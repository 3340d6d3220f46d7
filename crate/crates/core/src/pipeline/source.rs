//! Frame acquisition: a scripted in-memory source for tests and a directory
//! poller fed by an external capture process.

use std::collections::BTreeSet;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use image::DynamicImage;

use super::PipelineError;

/// One acquired frame. Ids are strictly increasing within a source.
pub struct Frame {
    pub frame_id: u64,
    pub image: DynamicImage,
}

pub trait FrameSource {
    /// Blocks until the next frame, `Ok(None)` at end of stream.
    fn next_frame(&mut self) -> Result<Option<Frame>, PipelineError>;
}

/// Replays a fixed list of images, ids 0, 1, 2, ...
pub struct ScriptedSource {
    frames: VecDeque<DynamicImage>,
    next_id: u64,
}

impl ScriptedSource {
    pub fn new(frames: Vec<DynamicImage>) -> Self {
        Self {
            frames: frames.into(),
            next_id: 0,
        }
    }
}

impl FrameSource for ScriptedSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, PipelineError> {
        Ok(self.frames.pop_front().map(|image| {
            let frame_id = self.next_id;
            self.next_id += 1;
            Frame { frame_id, image }
        }))
    }
}

/// Watches a directory for image files appearing over time. Files are
/// consumed once each, in lexicographic order per poll sweep; undecodable
/// files are skipped with a warning. The stream ends after `max_frames`
/// frames (0 = unbounded) or when `stop` is raised.
pub struct DirectoryPoller {
    dir: PathBuf,
    poll_interval: Duration,
    max_frames: u64,
    stop: Arc<AtomicBool>,
    seen: BTreeSet<PathBuf>,
    pending: VecDeque<PathBuf>,
    next_id: u64,
}

impl DirectoryPoller {
    pub fn new(
        dir: &Path,
        poll_interval: Duration,
        max_frames: u64,
        stop: Arc<AtomicBool>,
    ) -> Result<Self, PipelineError> {
        if !dir.is_dir() {
            return Err(PipelineError::Source(format!(
                "frame directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            poll_interval,
            max_frames,
            stop,
            seen: BTreeSet::new(),
            pending: VecDeque::new(),
            next_id: 0,
        })
    }

    fn sweep(&mut self) -> Result<(), PipelineError> {
        let entries = std::fs::read_dir(&self.dir)
            .map_err(|e| PipelineError::Source(format!("read {}: {e}", self.dir.display())))?;
        let mut fresh: Vec<PathBuf> = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_file() && !self.seen.contains(&path) {
                fresh.push(path);
            }
        }
        fresh.sort();
        for path in fresh {
            self.seen.insert(path.clone());
            self.pending.push_back(path);
        }
        Ok(())
    }
}

impl FrameSource for DirectoryPoller {
    fn next_frame(&mut self) -> Result<Option<Frame>, PipelineError> {
        loop {
            if self.stop.load(Ordering::SeqCst) {
                return Ok(None);
            }
            if self.max_frames > 0 && self.next_id >= self.max_frames {
                return Ok(None);
            }
            if let Some(path) = self.pending.pop_front() {
                match image::open(&path) {
                    Ok(image) => {
                        let frame_id = self.next_id;
                        self.next_id += 1;
                        return Ok(Some(Frame { frame_id, image }));
                    }
                    Err(e) => {
                        log::warn!("skipping undecodable frame {}: {e}", path.display());
                        continue;
                    }
                }
            }
            self.sweep()?;
            if self.pending.is_empty() {
                std::thread::sleep(self.poll_interval);
            }
        }
    }
}
