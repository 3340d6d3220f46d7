//! Child-process detector adapter speaking newline-delimited JSON.
//!
//! Requests go to the child's stdin one JSON object per line; responses come
//! back the same way and are correlated by id. Exactly one request is in
//! flight at a time. Images travel by temp-file path on the same host
//! (default) or inline as base64 PNG. A crashed child is restarted at most
//! once per `detect` call; a timed-out child is killed so the next call
//! starts fresh. Malformed or mis-addressed response lines are skipped,
//! logged, and counted, never fatal by themselves.

use std::io::Write;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use base64::Engine;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{Detector, DetectorError};
use crate::detection::Detection;

/// How the frame reaches the child.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransfer {
    /// Write a PNG to a temp file and send its path (same-host children).
    TempFile,
    /// Inline the PNG as base64 in the request line.
    Base64,
}

#[derive(Debug, Clone)]
pub struct ExternalDetectorConfig {
    /// argv of the child process; element 0 is the executable.
    pub command: Vec<String>,
    pub timeout_ms: u64,
    pub transfer: ImageTransfer,
}

impl Default for ExternalDetectorConfig {
    fn default() -> Self {
        Self { command: Vec::new(), timeout_ms: 2000, transfer: ImageTransfer::TempFile }
    }
}

/// One request line. Exactly one of `image_path`/`image_b64` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorRequest {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_b64: Option<String>,
    pub width: u32,
    pub height: u32,
}

/// One response line. Unknown fields are ignored on parse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorResponse {
    pub id: u64,
    pub detections: Vec<Detection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency_ms: Option<f64>,
}

struct ChildProc {
    process: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

/// A handle on one child detector process. Owns the child exclusively; the
/// borrow checker enforces the single-in-flight rule via `&mut self`.
pub struct ExternalDetector {
    config: ExternalDetectorConfig,
    child: Option<ChildProc>,
    next_id: u64,
    protocol_errors: u64,
    restarts: u64,
}

impl ExternalDetector {
    /// The child is spawned lazily on the first `detect`.
    pub fn new(config: ExternalDetectorConfig) -> Self {
        Self { config, child: None, next_id: 1, protocol_errors: 0, restarts: 0 }
    }

    /// Response lines that failed to parse or carried an unexpected id.
    pub fn protocol_errors(&self) -> u64 {
        self.protocol_errors
    }

    /// Crash-triggered child restarts so far.
    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    fn spawn_child(config: &ExternalDetectorConfig) -> Result<ChildProc, DetectorError> {
        let Some((exe, args)) = config.command.split_first() else {
            return Err(DetectorError::Unavailable("no detector command configured".into()));
        };
        let mut process = Command::new(exe)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DetectorError::Unavailable(format!("cannot spawn {exe}: {e}")))?;
        let stdin = process.stdin.take().expect("stdin was piped");
        let stdout = process.stdout.take().expect("stdout was piped");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            use std::io::BufRead;
            for line in std::io::BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            // Sender drops here; the owner observes Disconnected.
        });
        Ok(ChildProc { process, stdin, lines })
    }

    fn kill_child(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.process.kill();
            let _ = c.process.wait();
        }
    }

    /// Clamp boxes into the frame and drop ones that vanish.
    fn sanitize(dets: Vec<Detection>, width: u32, height: u32) -> Vec<Detection> {
        let (wf, hf) = (width as f64, height as f64);
        dets.into_iter()
            .filter_map(|d| {
                let x0 = d.x.clamp(0.0, wf);
                let y0 = d.y.clamp(0.0, hf);
                let x1 = (d.x + d.w).clamp(0.0, wf);
                let y1 = (d.y + d.h).clamp(0.0, hf);
                if !(x1 > x0 && y1 > y0) || !d.score.is_finite() {
                    return None;
                }
                Some(Detection {
                    x: x0,
                    y: y0,
                    w: x1 - x0,
                    h: y1 - y0,
                    score: d.score.clamp(0.0, 1.0),
                    class_id: d.class_id,
                })
            })
            .collect()
    }
}

impl Detector for ExternalDetector {
    fn detect(&mut self, image: &DynamicImage) -> Result<Vec<Detection>, DetectorError> {
        let (width, height) = (image.width(), image.height());
        let mut png = Vec::new();
        image
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| DetectorError::Image(e.to_string()))?;
        let id = self.next_id;
        self.next_id += 1;
        // The temp file must outlive the child's read; hold it for the call.
        let mut _temp_file: Option<tempfile::NamedTempFile> = None;
        let mut restarted = false;
        'attempt: loop {
            if self.child.is_none() {
                self.child = Some(Self::spawn_child(&self.config)?);
            }
            let request = match self.config.transfer {
                ImageTransfer::TempFile => {
                    let mut f = tempfile::Builder::new()
                        .prefix("rockwatch-frame-")
                        .suffix(".png")
                        .tempfile()?;
                    f.write_all(&png)?;
                    f.flush()?;
                    let path = f.path().display().to_string();
                    _temp_file = Some(f);
                    DetectorRequest { id, image_path: Some(path), image_b64: None, width, height }
                }
                ImageTransfer::Base64 => DetectorRequest {
                    id,
                    image_path: None,
                    image_b64: Some(base64::engine::general_purpose::STANDARD.encode(&png)),
                    width,
                    height,
                },
            };
            let line = serde_json::to_string(&request).expect("request serialization is infallible");
            let child = self.child.as_mut().expect("child was just ensured");
            let write_ok = writeln!(child.stdin, "{line}").and_then(|_| child.stdin.flush());
            if write_ok.is_err() {
                self.kill_child();
                if restarted {
                    return Err(DetectorError::Unavailable(
                        "detector process keeps dying; giving up on this frame".into(),
                    ));
                }
                restarted = true;
                self.restarts += 1;
                log::warn!("detector stdin closed; restarting child");
                continue 'attempt;
            }
            let deadline = Instant::now() + Duration::from_millis(self.config.timeout_ms);
            loop {
                let remaining = deadline.saturating_duration_since(Instant::now());
                if remaining.is_zero() {
                    self.kill_child();
                    return Err(DetectorError::Timeout(self.config.timeout_ms));
                }
                let child = self.child.as_mut().expect("child alive inside attempt");
                match child.lines.recv_timeout(remaining) {
                    Ok(line) => match serde_json::from_str::<DetectorResponse>(&line) {
                        Ok(resp) if resp.id == id => {
                            return Ok(Self::sanitize(resp.detections, width, height));
                        }
                        Ok(resp) => {
                            self.protocol_errors += 1;
                            log::warn!("detector answered id {} while {} is pending; skipped", resp.id, id);
                        }
                        Err(e) => {
                            self.protocol_errors += 1;
                            log::warn!("malformed detector line skipped: {e}");
                        }
                    },
                    Err(RecvTimeoutError::Timeout) => {
                        // Loop re-checks the deadline and times out there.
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        self.kill_child();
                        if restarted {
                            return Err(DetectorError::Unavailable(
                                "detector process keeps dying; giving up on this frame".into(),
                            ));
                        }
                        restarted = true;
                        self.restarts += 1;
                        log::warn!("detector process exited; restarting and reissuing request {id}");
                        continue 'attempt;
                    }
                }
            }
        }
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        self.kill_child();
    }
}
