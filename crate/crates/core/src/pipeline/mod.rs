//! The live device loop: paced frame acquisition, sliced inference, the
//! alert state machine, laser dispatch, alert sinks, and the persistent
//! event log.
//!
//! The state machine itself ([`step`]) is a pure function, so any recorded
//! detection trace replays to the exact same transition sequence.

pub mod events;
pub mod sinks;
pub mod source;

pub use events::{read_events, AlertEvent, EventWriter, SinkKind, SinkResult};
pub use sinks::{fire_sinks, AlertSink, CommandSink, LogSink, SinkContext};
pub use source::{DirectoryPoller, Frame, FrameSource, ScriptedSource};

use std::cmp::Ordering as CmpOrdering;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Detection;
use crate::detector::{Detector, ExternalDetector, ExternalDetectorConfig, ImageTransfer, StubDetector};
use crate::geometry::{GeometryConfig, GeometryError, PixelPoint};
use crate::slicing::sliced_inference;
use crate::tracking::actuator::{Actuator, CommandActuator};
use crate::tracking::{self, TrackerState, TrackerStatus, TrackingParams, TrackingRig};

/// Matching a previous target to a fresh detection keeps its identity when
/// their IoU reaches this much.
pub const REASSOCIATION_IOU: f64 = 0.3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("event log: {0}")]
    EventLog(#[from] std::io::Error),
    #[error("frame source: {0}")]
    Source(String),
    #[error("actuator: {0}")]
    Actuator(String),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub width: u32,
    pub height: u32,
    pub fov_h_deg: f64,
    pub mount_height_m: f64,
}

/// Laser emitter offset from the camera on the mount plane, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserSection {
    pub x_m: f64,
    #[serde(default)]
    pub y_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSection {
    pub pan_invert: bool,
    pub tilt_invert: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    #[default]
    Stub,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub mode: DetectorMode,
    /// Child-process command line for `mode = "external"`.
    pub command: Vec<String>,
    pub timeout_ms: u64,
    pub transfer: ImageTransfer,
    /// Swap in the synthetic stub if the external detector dies for good.
    pub stub_fallback: bool,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            mode: DetectorMode::Stub,
            command: Vec::new(),
            timeout_ms: 2000,
            transfer: ImageTransfer::TempFile,
            stub_fallback: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicingSection {
    pub patch: u32,
    pub iou_threshold: f64,
}

impl Default for SlicingSection {
    fn default() -> Self {
        Self {
            patch: 640,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramesSection {
    /// Directory the poller watches; required by `run` unless a source is
    /// injected programmatically.
    pub dir: Option<PathBuf>,
    pub poll_ms: u64,
    pub max_frames: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorSection {
    /// Line-protocol pan/tilt bridge command; empty disables hardware output.
    pub command: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SinkSpec {
    Log,
    Command { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub camera: CameraSection,
    pub laser: LaserSection,
    #[serde(default)]
    pub servo: ServoSection,
    #[serde(default = "default_rate_hz")]
    pub rate_hz: f64,
    /// K: consecutive detection frames required to enter an alert.
    #[serde(default = "default_debounce_enter")]
    pub debounce_enter_frames: u32,
    /// M: consecutive empty frames required to clear an alert.
    #[serde(default = "default_clear_after")]
    pub clear_after_frames: u32,
    #[serde(default)]
    pub event_log_path: Option<PathBuf>,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub slicing: SlicingSection,
    #[serde(default)]
    pub tracking: TrackingParams,
    #[serde(default)]
    pub frames: FramesSection,
    #[serde(default)]
    pub actuator: ActuatorSection,
    #[serde(default)]
    pub sinks: Vec<SinkSpec>,
}

fn default_rate_hz() -> f64 {
    1.0
}
fn default_debounce_enter() -> u32 {
    1
}
fn default_clear_after() -> u32 {
    3
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::ConfigRead {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|source| PipelineError::ConfigParse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if self.debounce_enter_frames < 1 {
            return bad("debounce_enter_frames must be at least 1".into());
        }
        if self.clear_after_frames < 1 {
            return bad("clear_after_frames must be at least 1".into());
        }
        if self.slicing.patch == 0 {
            return bad("slicing.patch must be nonzero".into());
        }
        if !(0.0..=1.0).contains(&self.slicing.iou_threshold) {
            return bad(format!(
                "slicing.iou_threshold must be in [0, 1], got {}",
                self.slicing.iou_threshold
            ));
        }
        if self.detector.mode == DetectorMode::External && self.detector.command.is_empty() {
            return bad("detector.mode = \"external\" requires detector.command".into());
        }
        self.geometry()?;
        Ok(())
    }

    /// The projection model implied by the camera/laser/servo sections.
    pub fn geometry(&self) -> Result<GeometryConfig, PipelineError> {
        Ok(GeometryConfig::new(
            self.camera.width,
            self.camera.height,
            self.camera.fov_h_deg,
            self.camera.mount_height_m,
            (self.laser.x_m, self.laser.y_m),
            self.servo.pan_invert,
            self.servo.tilt_invert,
        )?)
    }

    pub fn step_params(&self) -> StepParams {
        StepParams {
            debounce_enter_frames: self.debounce_enter_frames,
            clear_after_frames: self.clear_after_frames,
        }
    }
}

// ---------------------------------------------------------------------------
// Alert state machine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertMode {
    #[default]
    Idle,
    AlertActive,
    Clearing,
}

/// Mutable loop state. `active_target` persists through CLEARING so a
/// reappearing rock keeps its identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlertState {
    pub mode: AlertMode,
    pub consecutive_hits: u32,
    pub consecutive_misses: u32,
    pub active_target: Option<Detection>,
    pub laser: Option<TrackerState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepParams {
    pub debounce_enter_frames: u32,
    pub clear_after_frames: u32,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            debounce_enter_frames: 1,
            clear_after_frames: 3,
        }
    }
}

/// Side effects the runner must execute after a step.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    FireSinks(SinkKind),
    /// Point the laser at this target's center for the current frame.
    Track(Detection),
    LaserOff,
}

/// Picks the alert target: highest score, ties by larger area, then lower x,
/// then lower y. `None` only for an empty list.
pub fn select_target(detections: &[Detection]) -> Option<&Detection> {
    detections.iter().min_by(|a, b| a.rank_cmp(b))
}

/// Keeps the previous target's identity when a fresh detection overlaps it
/// with IoU >= [`REASSOCIATION_IOU`]; otherwise falls back to selection.
fn reassociate<'a>(previous: Option<&Detection>, detections: &'a [Detection]) -> &'a Detection {
    if let Some(prev) = previous {
        let mut best: Option<(&Detection, f64)> = None;
        for d in detections {
            let iou = prev.iou(d);
            if iou < REASSOCIATION_IOU {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, best_iou)) => {
                    iou > best_iou || (iou == best_iou && d.rank_cmp(b) == CmpOrdering::Less)
                }
            };
            if better {
                best = Some((d, iou));
            }
        }
        if let Some((d, _)) = best {
            return d;
        }
    }
    select_target(detections).expect("reassociate called with detections")
}

/// Pure transition function. IDLE enters ALERT_ACTIVE after K consecutive
/// detection frames; ALERT_ACTIVE degrades to CLEARING on a miss and returns
/// on a hit; M consecutive misses end the episode (clear sinks, laser off).
pub fn step(
    state: &AlertState,
    detections: &[Detection],
    params: &StepParams,
) -> (AlertState, Vec<Action>) {
    let mut next = state.clone();
    let mut actions = Vec::new();
    let present = !detections.is_empty();
    match state.mode {
        AlertMode::Idle => {
            if present {
                next.consecutive_hits = state.consecutive_hits + 1;
                if next.consecutive_hits >= params.debounce_enter_frames {
                    let target = select_target(detections).expect("detections present").clone();
                    next.mode = AlertMode::AlertActive;
                    next.consecutive_hits = 0;
                    next.consecutive_misses = 0;
                    next.active_target = Some(target.clone());
                    actions.push(Action::FireSinks(SinkKind::Enter));
                    actions.push(Action::Track(target));
                }
            } else {
                next.consecutive_hits = 0;
            }
        }
        AlertMode::AlertActive | AlertMode::Clearing => {
            if present {
                let target = reassociate(state.active_target.as_ref(), detections).clone();
                next.mode = AlertMode::AlertActive;
                next.consecutive_misses = 0;
                next.active_target = Some(target.clone());
                actions.push(Action::Track(target));
            } else {
                next.consecutive_misses = state.consecutive_misses + 1;
                if next.consecutive_misses >= params.clear_after_frames {
                    next.mode = AlertMode::Idle;
                    next.consecutive_hits = 0;
                    next.consecutive_misses = 0;
                    next.active_target = None;
                    next.laser = None;
                    actions.push(Action::FireSinks(SinkKind::Clear));
                    actions.push(Action::LaserOff);
                } else {
                    next.mode = AlertMode::Clearing;
                }
            }
        }
    }
    (next, actions)
}

/// Replays per-frame detection lists through the state machine from IDLE and
/// returns each frame's (from, to) transition. Reproduces a run's event-log
/// transition sequence exactly.
pub fn replay_transitions(
    frames: &[Vec<Detection>],
    params: &StepParams,
) -> Vec<(AlertMode, AlertMode)> {
    let mut state = AlertState::default();
    frames
        .iter()
        .map(|detections| {
            let from = state.mode;
            let (next, _) = step(&state, detections, params);
            state = next;
            (from, state.mode)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// How laser pointing is realized.
pub enum LaserDriver {
    /// No hardware attached; tracker state stays empty.
    Disabled,
    /// Command a pan/tilt bridge open-loop at the nominal surface depth.
    OpenLoop {
        actuator: Box<dyn Actuator>,
        laser_on: bool,
    },
    /// Close the loop through dot observations (simulation or camera rig).
    ClosedLoop { rig: Box<dyn TrackingRig> },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunSummary {
    pub frames: u64,
    pub enters: u64,
    pub clears: u64,
    /// Frames processed on a detector fault path.
    pub fault_frames: u64,
    pub sink_failures: u64,
    pub degraded: bool,
}

pub struct Pipeline {
    config: PipelineConfig,
    geometry: GeometryConfig,
    step_params: StepParams,
    detector: Box<dyn Detector>,
    sinks: Vec<Box<dyn AlertSink>>,
    laser: LaserDriver,
    writer: Option<EventWriter>,
    state: AlertState,
    degraded: bool,
    last_frame_id: Option<u64>,
    summary: RunSummary,
}

pub fn build_sinks(specs: &[SinkSpec]) -> Result<Vec<Box<dyn AlertSink>>, PipelineError> {
    specs
        .iter()
        .map(|spec| match spec {
            SinkSpec::Log => Ok(Box::new(LogSink) as Box<dyn AlertSink>),
            SinkSpec::Command { command } => CommandSink::new(command.clone())
                .map(|s| Box::new(s) as Box<dyn AlertSink>)
                .map_err(PipelineError::InvalidConfig),
        })
        .collect()
}

impl Pipeline {
    pub fn from_config(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let geometry = config.geometry()?;
        let detector: Box<dyn Detector> = match config.detector.mode {
            DetectorMode::Stub => Box::new(StubDetector::default()),
            DetectorMode::External => Box::new(ExternalDetector::new(ExternalDetectorConfig {
                command: config.detector.command.clone(),
                timeout_ms: config.detector.timeout_ms,
                transfer: config.detector.transfer,
            })),
        };
        let sinks = build_sinks(&config.sinks)?;
        let laser = if config.actuator.command.is_empty() {
            LaserDriver::Disabled
        } else {
            let actuator = CommandActuator::spawn(&config.actuator.command)
                .map_err(|e| PipelineError::Actuator(e.to_string()))?;
            LaserDriver::OpenLoop {
                actuator: Box::new(actuator),
                laser_on: false,
            }
        };
        let writer = match &config.event_log_path {
            Some(path) => Some(EventWriter::create(path)?),
            None => None,
        };
        let step_params = config.step_params();
        Ok(Self {
            config,
            geometry,
            step_params,
            detector,
            sinks,
            laser,
            writer,
            state: AlertState::default(),
            degraded: false,
            last_frame_id: None,
            summary: RunSummary::default(),
        })
    }

    /// Replaces the detector (test and simulation hook).
    pub fn with_detector(mut self, detector: Box<dyn Detector>) -> Self {
        self.detector = detector;
        self
    }

    /// Closes the laser loop through the given rig (simulator hook).
    pub fn with_laser_rig(mut self, rig: Box<dyn TrackingRig>) -> Self {
        self.laser = LaserDriver::ClosedLoop { rig };
        self
    }

    pub fn with_sink(mut self, sink: Box<dyn AlertSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    pub fn state(&self) -> &AlertState {
        &self.state
    }

    /// Runs the loop until the source ends or `stop` is raised, then closes
    /// any open episode with a final event. Sink and detector failures never
    /// abort the loop; event-log I/O failures do.
    pub fn run(
        &mut self,
        source: &mut dyn FrameSource,
        stop: &AtomicBool,
    ) -> Result<RunSummary, PipelineError> {
        let period = Duration::from_secs_f64(1.0 / self.config.rate_hz);
        while !stop.load(Ordering::SeqCst) {
            let started = Instant::now();
            let Some(frame) = source.next_frame()? else {
                break;
            };
            self.process_frame(&frame)?;
            self.pace(period, started, stop);
        }
        self.shutdown()?;
        Ok(self.summary)
    }

    /// Sleeps out the remainder of the frame period in short slices so a
    /// stop signal is honored promptly.
    fn pace(&self, period: Duration, started: Instant, stop: &AtomicBool) {
        let deadline = started + period;
        loop {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            let now = Instant::now();
            if now >= deadline {
                return;
            }
            std::thread::sleep((deadline - now).min(Duration::from_millis(20)));
        }
    }

    fn process_frame(&mut self, frame: &Frame) -> Result<(), PipelineError> {
        let mut error = None;
        let mut sink_results = Vec::new();
        let detections = match sliced_inference(
            &frame.image,
            self.detector.as_mut(),
            self.config.slicing.patch,
            self.config.slicing.iou_threshold,
        ) {
            Ok(d) => d,
            Err(e) => {
                self.summary.fault_frames += 1;
                error = Some(e.to_string());
                log::error!("detector failed on frame {}: {e}", frame.frame_id);
                let first_fault = !self.degraded;
                self.degraded = true;
                self.summary.degraded = true;
                if first_fault {
                    let ctx = self.sink_context(frame.frame_id);
                    sink_results = fire_sinks(&mut self.sinks, SinkKind::Fault, &ctx);
                }
                if first_fault && self.config.detector.stub_fallback {
                    log::warn!("switching to the stub detector");
                    self.detector = Box::new(StubDetector::default());
                    sliced_inference(
                        &frame.image,
                        self.detector.as_mut(),
                        self.config.slicing.patch,
                        self.config.slicing.iou_threshold,
                    )
                    .unwrap_or_default()
                } else {
                    Vec::new()
                }
            }
        };

        let from = self.state.mode;
        let (next, actions) = step(&self.state, &detections, &self.step_params);
        self.state = next;
        for action in actions {
            match action {
                Action::FireSinks(kind) => {
                    match kind {
                        SinkKind::Enter => self.summary.enters += 1,
                        SinkKind::Clear => self.summary.clears += 1,
                        SinkKind::Fault => {}
                    }
                    let ctx = self.sink_context(frame.frame_id);
                    sink_results.extend(fire_sinks(&mut self.sinks, kind, &ctx));
                }
                Action::Track(target) => self.point_laser(&target),
                Action::LaserOff => self.laser_off(),
            }
        }
        self.summary.sink_failures += sink_results.iter().filter(|r| !r.ok).count() as u64;

        let event = AlertEvent {
            timestamp_ms: now_ms(),
            frame_id: frame.frame_id,
            from,
            to: self.state.mode,
            detections,
            selected_target: self.state.active_target.clone(),
            laser_pose: self.normalized_laser_pose(),
            sink_results,
            error,
        };
        self.append(&event)?;
        self.last_frame_id = Some(frame.frame_id);
        self.summary.frames += 1;
        Ok(())
    }

    /// Closes an open alert episode so no run ends with the laser lit.
    fn shutdown(&mut self) -> Result<(), PipelineError> {
        if self.state.mode == AlertMode::Idle {
            return Ok(());
        }
        let from = self.state.mode;
        let frame_id = self.last_frame_id.map_or(0, |id| id + 1);
        let ctx = self.sink_context(frame_id);
        let sink_results = fire_sinks(&mut self.sinks, SinkKind::Clear, &ctx);
        self.summary.clears += 1;
        self.summary.sink_failures += sink_results.iter().filter(|r| !r.ok).count() as u64;
        self.laser_off();
        self.state = AlertState::default();
        let event = AlertEvent {
            timestamp_ms: now_ms(),
            frame_id,
            from,
            to: AlertMode::Idle,
            detections: Vec::new(),
            selected_target: None,
            laser_pose: None,
            sink_results,
            error: Some("shutdown with an open alert".into()),
        };
        self.append(&event)
    }

    fn append(&mut self, event: &AlertEvent) -> Result<(), PipelineError> {
        if let Some(writer) = &mut self.writer {
            writer.append(event)?;
        }
        Ok(())
    }

    fn sink_context(&self, frame_id: u64) -> SinkContext {
        SinkContext {
            frame_id,
            target_center: self.state.active_target.as_ref().map(|t| t.center()),
        }
    }

    fn point_laser(&mut self, target: &Detection) {
        let (u, v) = target.center();
        let target_px = PixelPoint { u, v };
        match &mut self.laser {
            LaserDriver::Disabled => {}
            LaserDriver::OpenLoop { actuator, laser_on } => {
                let solved = self.geometry.pixel_to_plane(target_px).and_then(|p| {
                    let pose = self.geometry.solve_pan_tilt(p);
                    Ok((pose, self.geometry.normalize(pose)?))
                });
                match solved {
                    Ok((pose, (n_pan, n_tilt))) => {
                        if let Err(e) = actuator.pose(n_pan, n_tilt) {
                            log::warn!("actuator pose failed: {e}");
                            return;
                        }
                        if !*laser_on {
                            if let Err(e) = actuator.laser(true) {
                                log::warn!("actuator laser-on failed: {e}");
                            } else {
                                *laser_on = true;
                            }
                        }
                        self.state.laser = Some(TrackerState {
                            target_px,
                            pose,
                            iteration: 0,
                            status: TrackerStatus::Seeking,
                            last_error_px: f64::INFINITY,
                        });
                    }
                    Err(e) => log::warn!("laser solve failed for ({u:.1}, {v:.1}): {e}"),
                }
            }
            LaserDriver::ClosedLoop { rig } => {
                match tracking::track(&self.geometry, &self.config.tracking, target_px, rig.as_mut())
                {
                    Ok(tracker) => self.state.laser = Some(tracker),
                    Err(e) => {
                        log::warn!("tracking failed for ({u:.1}, {v:.1}): {e}");
                        self.state.laser = None;
                    }
                }
            }
        }
    }

    fn laser_off(&mut self) {
        match &mut self.laser {
            LaserDriver::Disabled => {}
            LaserDriver::OpenLoop { actuator, laser_on } => {
                if let Err(e) = actuator.laser(false) {
                    log::warn!("actuator laser-off failed: {e}");
                }
                *laser_on = false;
            }
            LaserDriver::ClosedLoop { rig } => {
                if let Err(e) = rig.laser_off() {
                    log::warn!("rig laser-off failed: {e}");
                }
            }
        }
        self.state.laser = None;
    }

    fn normalized_laser_pose(&self) -> Option<(f64, f64)> {
        let tracker = self.state.laser.as_ref()?;
        self.geometry.normalize(tracker.pose).ok()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{scene_generate, DetectorError, SceneObject, SyntheticScene};
    use crate::tracking::sim::FlatSceneRig;
    use image::DynamicImage;
    use std::slice::from_ref;
    use std::sync::atomic::AtomicBool;
    use std::sync::{Arc, Mutex};

    fn det(x: f64, y: f64, score: f64) -> Detection {
        Detection::new(x, y, 10.0, 10.0, score, 0)
    }

    fn params(k: u32, m: u32) -> StepParams {
        StepParams {
            debounce_enter_frames: k,
            clear_after_frames: m,
        }
    }

    #[test]
    fn idle_stays_idle_without_detections() {
        let (next, actions) = step(&AlertState::default(), &[], &params(1, 3));
        assert_eq!(next, AlertState::default());
        assert!(actions.is_empty());
    }

    #[test]
    fn enters_immediately_with_k1() {
        let d = det(5.0, 5.0, 0.9);
        let (next, actions) = step(&AlertState::default(), from_ref(&d), &params(1, 3));
        assert_eq!(next.mode, AlertMode::AlertActive);
        assert_eq!(next.active_target, Some(d.clone()));
        assert_eq!(
            actions,
            vec![Action::FireSinks(SinkKind::Enter), Action::Track(d)]
        );
    }

    #[test]
    fn debounce_k2_needs_consecutive_hits() {
        let p = params(2, 3);
        let d = det(5.0, 5.0, 0.9);
        let s0 = AlertState::default();
        let (s1, a1) = step(&s0, from_ref(&d), &p);
        assert_eq!(s1.mode, AlertMode::Idle);
        assert_eq!(s1.consecutive_hits, 1);
        assert!(a1.is_empty());
        // A miss resets the streak.
        let (s2, _) = step(&s1, &[], &p);
        assert_eq!(s2.consecutive_hits, 0);
        // Two in a row enter.
        let (s3, _) = step(&s2, from_ref(&d), &p);
        let (s4, a4) = step(&s3, from_ref(&d), &p);
        assert_eq!(s4.mode, AlertMode::AlertActive);
        assert_eq!(a4.len(), 2);
    }

    #[test]
    fn misses_then_hit_resumes_without_new_enter() {
        let p = params(1, 3);
        let d = det(5.0, 5.0, 0.9);
        let (active, _) = step(&AlertState::default(), from_ref(&d), &p);
        let (m1, a1) = step(&active, &[], &p);
        assert_eq!(m1.mode, AlertMode::Clearing);
        assert_eq!(m1.consecutive_misses, 1);
        assert!(a1.is_empty());
        let (m2, _) = step(&m1, &[], &p);
        assert_eq!(m2.mode, AlertMode::Clearing);
        assert_eq!(m2.consecutive_misses, 2);
        // Reappears before M: back to active, counter reset, no sink action.
        let (back, actions) = step(&m2, from_ref(&d), &p);
        assert_eq!(back.mode, AlertMode::AlertActive);
        assert_eq!(back.consecutive_misses, 0);
        assert_eq!(actions, vec![Action::Track(d)]);
    }

    #[test]
    fn clears_after_m_misses() {
        let p = params(1, 3);
        let d = det(5.0, 5.0, 0.9);
        let (mut state, _) = step(&AlertState::default(), &[d], &p);
        for _ in 0..2 {
            let (s, a) = step(&state, &[], &p);
            assert!(a.is_empty());
            state = s;
        }
        let (cleared, actions) = step(&state, &[], &p);
        assert_eq!(cleared.mode, AlertMode::Idle);
        assert_eq!(cleared.active_target, None);
        assert_eq!(
            actions,
            vec![Action::FireSinks(SinkKind::Clear), Action::LaserOff]
        );
    }

    #[test]
    fn m_equals_one_clears_on_first_miss() {
        let p = params(1, 1);
        let (active, _) = step(&AlertState::default(), &[det(0.0, 0.0, 1.0)], &p);
        let (cleared, actions) = step(&active, &[], &p);
        assert_eq!(cleared.mode, AlertMode::Idle);
        assert_eq!(actions.len(), 2);
    }

    #[test]
    fn target_identity_persists_by_overlap() {
        let p = params(1, 3);
        let original = det(100.0, 100.0, 0.6);
        let (active, _) = step(&AlertState::default(), from_ref(&original), &p);
        // The old rock drifted slightly (high IoU, lower score); a brighter
        // new rock appeared elsewhere. Identity wins over score.
        let drifted = det(102.0, 101.0, 0.3);
        let brighter = det(300.0, 300.0, 0.95);
        let (next, _) = step(&active, &[brighter.clone(), drifted.clone()], &p);
        assert_eq!(next.active_target, Some(drifted));
        // Once the old target is gone entirely, selection takes over.
        let (moved_on, _) = step(&next, from_ref(&brighter), &p);
        assert_eq!(moved_on.active_target, Some(brighter));
    }

    #[test]
    fn select_target_applies_the_tie_break_chain() {
        let a = Detection::new(50.0, 50.0, 10.0, 10.0, 0.7, 0);
        let b = Detection::new(10.0, 10.0, 20.0, 20.0, 0.7, 0);
        let c = Detection::new(5.0, 90.0, 20.0, 20.0, 0.7, 0);
        // Equal scores: larger area wins; equal areas: lower x wins.
        assert_eq!(select_target(&[a.clone(), b.clone()]), Some(&b));
        assert_eq!(
            select_target(&[a.clone(), b.clone(), c.clone()]).unwrap(),
            &c
        );
        assert_eq!(select_target(&[]), None);
        let high = Detection::new(0.0, 0.0, 2.0, 2.0, 0.9, 0);
        assert_eq!(select_target(&[a, high.clone()]).unwrap(), &high);
    }

    #[test]
    fn replay_matches_the_canonical_trace() {
        let rock = vec![det(10.0, 10.0, 0.9)];
        let frames = vec![vec![], rock.clone(), rock, vec![], vec![], vec![]];
        let transitions = replay_transitions(&frames, &params(1, 3));
        use AlertMode::*;
        assert_eq!(
            transitions,
            vec![
                (Idle, Idle),
                (Idle, AlertActive),
                (AlertActive, AlertActive),
                (AlertActive, Clearing),
                (Clearing, Clearing),
                (Clearing, Idle),
            ]
        );
        let enters = transitions
            .iter()
            .filter(|(f, t)| *f == Idle && *t == AlertActive)
            .count();
        let clears = transitions
            .iter()
            .filter(|(f, t)| *f != Idle && *t == Idle)
            .count();
        assert_eq!((enters, clears), (1, 1));
    }

    // -- runner tests --------------------------------------------------

    const TOML_MINIMAL: &str = r#"
        [camera]
        width = 640
        height = 480
        fov_h_deg = 66.0
        mount_height_m = 2.0

        [laser]
        x_m = 0.3
    "#;

    fn test_config() -> PipelineConfig {
        let mut cfg: PipelineConfig = toml::from_str(TOML_MINIMAL).unwrap();
        cfg.rate_hz = 1000.0;
        cfg.slicing.patch = 640;
        cfg
    }

    fn rock_scene() -> SyntheticScene {
        SyntheticScene {
            width: 640,
            height: 480,
            objects: vec![SceneObject {
                center: (400.0, 300.0),
                radii: (14.0, 11.0),
                contrast: 0.8,
                class_id: 0,
            }],
            background_texture_seed: 5,
        }
    }

    fn blank_scene() -> SyntheticScene {
        SyntheticScene {
            width: 640,
            height: 480,
            objects: vec![],
            background_texture_seed: 5,
        }
    }

    fn frames_for(specs: &[bool]) -> Vec<DynamicImage> {
        specs
            .iter()
            .map(|&has_rock| {
                let scene = if has_rock { rock_scene() } else { blank_scene() };
                scene_generate(&scene, 3).0
            })
            .collect()
    }

    /// Records every firing; optionally fails on demand.
    struct RecordingSink {
        fired: Arc<Mutex<Vec<(SinkKind, u64)>>>,
        fail: bool,
    }

    impl AlertSink for RecordingSink {
        fn name(&self) -> &str {
            "recording"
        }
        fn fire(&mut self, kind: SinkKind, ctx: &SinkContext) -> Result<(), String> {
            self.fired.lock().unwrap().push((kind, ctx.frame_id));
            if self.fail {
                Err("injected sink failure".into())
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn config_defaults_fill_in() {
        let cfg: PipelineConfig = toml::from_str(TOML_MINIMAL).unwrap();
        assert_eq!(cfg.rate_hz, 1.0);
        assert_eq!(cfg.debounce_enter_frames, 1);
        assert_eq!(cfg.clear_after_frames, 3);
        assert_eq!(cfg.detector.mode, DetectorMode::Stub);
        assert_eq!(cfg.detector.timeout_ms, 2000);
        assert_eq!(cfg.slicing.patch, 640);
        assert_eq!(cfg.slicing.iou_threshold, 0.5);
        assert_eq!(cfg.tracking, TrackingParams::default());
        assert_eq!(cfg.laser.y_m, 0.0);
        assert!(cfg.sinks.is_empty());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let with_typo = format!("{TOML_MINIMAL}\nrate_hz_typo = 2.0\n");
        assert!(toml::from_str::<PipelineConfig>(&with_typo).is_err());
        let nested_typo = TOML_MINIMAL.replace("x_m = 0.3", "x_m = 0.3\nzz = 1");
        assert!(toml::from_str::<PipelineConfig>(&nested_typo).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = test_config();
        cfg.rate_hz = 0.0;
        assert!(matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))));

        let mut cfg = test_config();
        cfg.clear_after_frames = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = test_config();
        cfg.detector.mode = DetectorMode::External;
        assert!(cfg.validate().is_err(), "external without a command");

        let mut cfg = test_config();
        cfg.camera.fov_h_deg = 200.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, TOML_MINIMAL).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.camera.width, 640);
        assert!(PipelineConfig::load(&dir.path().join("missing.toml")).is_err());
    }

    #[test]
    fn scripted_run_fires_one_enter_and_one_clear() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("events.jsonl");
        let mut cfg = test_config();
        cfg.event_log_path = Some(log_path.clone());
        let fired = Arc::new(Mutex::new(Vec::new()));
        let mut pipeline = Pipeline::from_config(cfg).unwrap().with_sink(Box::new(
            RecordingSink {
                fired: fired.clone(),
                fail: false,
            },
        ));
        let mut source =
            ScriptedSource::new(frames_for(&[false, true, true, false, false, false]));
        let summary = pipeline
            .run(&mut source, &AtomicBool::new(false))
            .unwrap();

        assert_eq!(summary.frames, 6);
        assert_eq!((summary.enters, summary.clears), (1, 1));
        assert_eq!(summary.fault_frames, 0);
        assert!(!summary.degraded);

        let events = read_events(&log_path).unwrap();
        assert_eq!(events.len(), 6);
        let ids: Vec<u64> = events.iter().map(|e| e.frame_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(events.iter().filter(|e| e.is_enter()).count(), 1);
        assert_eq!(events.iter().filter(|e| e.is_clear()).count(), 1);
        assert!(events[1].is_enter());
        assert!(events[5].is_clear());
        // Active frames carry their target.
        assert!(events[1].selected_target.is_some());
        assert!(events[2].selected_target.is_some());
        assert!(events[0].selected_target.is_none());
        // The recorded transitions replay exactly from the detection lists.
        let traces: Vec<Vec<Detection>> =
            events.iter().map(|e| e.detections.clone()).collect();
        let replayed = replay_transitions(&traces, &params(1, 3));
        let logged: Vec<(AlertMode, AlertMode)> =
            events.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(replayed, logged);
        // Sinks: one enter at frame 1, one clear at frame 5.
        assert_eq!(
            *fired.lock().unwrap(),
            vec![(SinkKind::Enter, 1), (SinkKind::Clear, 5)]
        );
    }

    #[test]
    fn failing_sinks_never_abort_the_run() {
        let mut cfg = test_config();
        cfg.sinks = vec![SinkSpec::Command {
            command: vec!["false".into()],
        }];
        let mut pipeline = Pipeline::from_config(cfg).unwrap();
        let mut source = ScriptedSource::new(frames_for(&[true, false, false, false]));
        let summary = pipeline.run(&mut source, &AtomicBool::new(false)).unwrap();
        assert_eq!(summary.frames, 4);
        assert_eq!((summary.enters, summary.clears), (1, 1));
        assert_eq!(summary.sink_failures, 2, "enter and clear both failed");
    }

    /// Fails every call, or only a scripted set of frames.
    struct FlakyDetector {
        calls: u32,
        fail_calls: Vec<u32>,
        inner: StubDetector,
    }

    impl Detector for FlakyDetector {
        fn detect(
            &mut self,
            image: &image::DynamicImage,
        ) -> Result<Vec<Detection>, DetectorError> {
            let call = self.calls;
            self.calls += 1;
            if self.fail_calls.contains(&call) {
                Err(DetectorError::Unavailable("injected crash".into()))
            } else {
                self.inner.detect(image)
            }
        }
    }

    #[test]
    fn detector_crash_without_fallback_degrades_but_continues() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("events.jsonl");
        let mut cfg = test_config();
        cfg.event_log_path = Some(log_path.clone());
        let fired = Arc::new(Mutex::new(Vec::new()));
        let mut pipeline = Pipeline::from_config(cfg)
            .unwrap()
            .with_detector(Box::new(FlakyDetector {
                calls: 0,
                fail_calls: (0..100).collect(),
                inner: StubDetector::default(),
            }))
            .with_sink(Box::new(RecordingSink {
                fired: fired.clone(),
                fail: false,
            }));
        let mut source = ScriptedSource::new(frames_for(&[true, true, true]));
        let summary = pipeline.run(&mut source, &AtomicBool::new(false)).unwrap();
        assert_eq!(summary.frames, 3);
        assert!(summary.degraded);
        assert_eq!(summary.fault_frames, 3);
        assert_eq!(summary.enters, 0, "no detections ever surface");
        // Fault sinks fire once, on entering the degraded state.
        assert_eq!(*fired.lock().unwrap(), vec![(SinkKind::Fault, 0)]);
        let events = read_events(&log_path).unwrap();
        assert!(events.iter().all(|e| e.error.is_some()));
    }

    #[test]
    fn detector_crash_with_stub_fallback_recovers_in_frame() {
        let mut cfg = test_config();
        cfg.detector.stub_fallback = true;
        let mut pipeline =
            Pipeline::from_config(cfg)
                .unwrap()
                .with_detector(Box::new(FlakyDetector {
                    calls: 0,
                    fail_calls: vec![0],
                    inner: StubDetector::default(),
                }));
        let mut source = ScriptedSource::new(frames_for(&[true, true, false, false, false]));
        let summary = pipeline.run(&mut source, &AtomicBool::new(false)).unwrap();
        assert_eq!(summary.frames, 5);
        assert!(summary.degraded);
        assert_eq!(summary.fault_frames, 1);
        // The stub caught the rock on the very frame the external died.
        assert_eq!((summary.enters, summary.clears), (1, 1));
    }

    #[test]
    fn closed_loop_run_tracks_and_douses_the_laser() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("events.jsonl");
        let mut cfg = test_config();
        cfg.event_log_path = Some(log_path.clone());
        let geometry = cfg.geometry().unwrap();
        let rig = FlatSceneRig::new(geometry, 2.0);
        let mut pipeline = Pipeline::from_config(cfg)
            .unwrap()
            .with_laser_rig(Box::new(rig));
        let mut source = ScriptedSource::new(frames_for(&[true, false, false, false]));
        let summary = pipeline.run(&mut source, &AtomicBool::new(false)).unwrap();
        assert_eq!((summary.enters, summary.clears), (1, 1));
        let events = read_events(&log_path).unwrap();
        // While active the event records a normalized pose within [-1, 1].
        let (n_pan, n_tilt) = events[0].laser_pose.expect("laser pose recorded");
        assert!(n_pan.abs() <= 1.0 && n_tilt.abs() <= 1.0);
        assert_eq!(events[0].to, AlertMode::AlertActive);
        // After the clear the pose is gone.
        assert_eq!(events[3].laser_pose, None);
    }

    #[test]
    fn shutdown_mid_episode_emits_a_final_clear() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("events.jsonl");
        let mut cfg = test_config();
        cfg.event_log_path = Some(log_path.clone());
        let mut pipeline = Pipeline::from_config(cfg).unwrap();
        // Source ends while a rock is still in view.
        let mut source = ScriptedSource::new(frames_for(&[true, true]));
        let summary = pipeline.run(&mut source, &AtomicBool::new(false)).unwrap();
        assert_eq!(summary.frames, 2);
        assert_eq!((summary.enters, summary.clears), (1, 1));
        let events = read_events(&log_path).unwrap();
        assert_eq!(events.len(), 3);
        let last = events.last().unwrap();
        assert!(last.is_clear());
        assert_eq!(last.frame_id, 2, "synthetic id keeps ids increasing");
        assert!(last.error.is_some());
    }

    #[test]
    fn empty_source_exits_clean_with_no_events() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("events.jsonl");
        let mut cfg = test_config();
        cfg.event_log_path = Some(log_path.clone());
        let mut pipeline = Pipeline::from_config(cfg).unwrap();
        let mut source = ScriptedSource::new(vec![]);
        let summary = pipeline.run(&mut source, &AtomicBool::new(false)).unwrap();
        assert_eq!(summary, RunSummary::default());
        assert!(read_events(&log_path).unwrap().is_empty());
    }
}
