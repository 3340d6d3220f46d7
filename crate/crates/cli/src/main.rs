//! rockwatch: operate the rock detection and laser marking stack from the
//! command line.
//!
//! Every subcommand fronts one library module: `run` drives the full alert
//! pipeline off a watched frame directory, `solve`/`simulate` exercise the
//! pointing geometry and the closed tracking loop, `detect`/`slice` cover
//! tiled inference, `augment` expands annotated training images, `dedup`
//! audits a capture directory for near-duplicates, `eval` scores prediction
//! manifests, and `replay` re-checks a recorded event log against the state
//! machine.
//!
//! Exit codes: 0 on success, 1 on operational failures, 2 on usage errors.
//! Each subcommand takes `--json` for machine-readable output on stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rockwatch_core::annotations::{AnnotationRecord, AnnotationSet, BoxRecord};
use rockwatch_core::augment::{apply_pipeline, AnnotatedImage, AugmentConfig};
use rockwatch_core::dedup;
use rockwatch_core::detector::{
    Detector, ExternalDetector, ExternalDetectorConfig, ImageTransfer, StubDetector,
};
use rockwatch_core::eval::evaluate;
use rockwatch_core::pipeline::{
    read_events, replay_transitions, DirectoryPoller, Pipeline, PipelineConfig, StepParams,
};
use rockwatch_core::slicing::{plan_tiles, slice, slice_annotations, sliced_inference};
use rockwatch_core::tracking::{track, FlatSceneRig};
use rockwatch_core::{Detection, PixelPoint};

#[derive(Parser)]
#[command(
    name = "rockwatch",
    version,
    about = "Rock detection and laser designation for a produce washing line"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Watch a frame directory and run the full alert pipeline
    Run(RunArgs),
    /// Solve the pan/tilt pose that points the laser at an image pixel
    Solve(SolveArgs),
    /// Close the tracking loop against a simulated flat scene
    Simulate(SimulateArgs),
    /// Detect objects in one image with tiled inference
    Detect(DetectArgs),
    /// Cut one image into patches, remapping its boxes alongside
    Slice(SliceArgs),
    /// Write augmented copies of an annotated image with provenance traces
    Augment(AugmentArgs),
    /// Find near-duplicate images under a directory
    Dedup(DedupArgs),
    /// Score a prediction manifest against ground truth
    Eval(EvalArgs),
    /// Check a recorded event log against the alert state machine
    Replay(ReplayArgs),
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Slice(args) => cmd_slice(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Dedup(args) => cmd_dedup(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Parses "u,v" into pixel coordinates.
fn parse_pixel(s: &str) -> Result<(f64, f64), String> {
    let (u, v) = s
        .split_once(',')
        .ok_or_else(|| format!("expected \"u,v\", got {s:?}"))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad coordinate {t:?}: {e}"))
    };
    Ok((parse(u)?, parse(v)?))
}

/// Looks an image's boxes up in a manifest by its full path or bare name.
fn boxes_for(set: &AnnotationSet, image_path: &Path) -> Result<Vec<Detection>> {
    let full = image_path.display().to_string();
    let name = image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let record = set
        .find(&full)
        .or_else(|| set.find(&name))
        .with_context(|| format!("no annotation record for {full:?} or {name:?}"))?;
    Ok(record.detections())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn write_pretty_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("write {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML)
    #[arg(long, env = "ROCKWATCH_CONFIG")]
    config: PathBuf,
    /// Print the run summary as JSON
    #[arg(long)]
    json: bool,
}

static SIGINT_STOP: OnceLock<Arc<AtomicBool>> = OnceLock::new();

extern "C" fn on_sigint(_sig: libc::c_int) {
    if let Some(stop) = SIGINT_STOP.get() {
        stop.store(true, Ordering::SeqCst);
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = PipelineConfig::load(&args.config)?;
    let frames = config.frames.clone();
    let Some(dir) = frames.dir.as_deref() else {
        bail!(
            "{} sets no [frames] dir; nothing to watch",
            args.config.display()
        );
    };
    let stop = Arc::new(AtomicBool::new(false));
    let _ = SIGINT_STOP.set(stop.clone());
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
    }
    let poll_ms = if frames.poll_ms == 0 { 200 } else { frames.poll_ms };
    let mut source = DirectoryPoller::new(
        dir,
        Duration::from_millis(poll_ms),
        frames.max_frames,
        stop.clone(),
    )?;
    log::info!("watching {} at {poll_ms} ms", dir.display());
    let mut pipeline = Pipeline::from_config(config)?;
    let summary = pipeline.run(&mut source, &stop)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "{} frames: {} alerts entered, {} cleared, {} fault frames, {} sink failures{}",
            summary.frames,
            summary.enters,
            summary.clears,
            summary.fault_frames,
            summary.sink_failures,
            if summary.degraded { " (degraded)" } else { "" },
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SolveArgs {
    /// Pipeline configuration (TOML)
    #[arg(long, env = "ROCKWATCH_CONFIG")]
    config: PathBuf,
    /// Target pixel as "u,v"
    #[arg(long, value_parser = parse_pixel)]
    target_px: (f64, f64),
    /// Surface depth in meters (default: the camera mount height)
    #[arg(long)]
    depth: Option<f64>,
    /// Print the solution as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let config = PipelineConfig::load(&args.config)?;
    let g = config.geometry()?;
    let px = PixelPoint::new(args.target_px.0, args.target_px.1);
    g.pixel_to_plane(px)?; // reject pixels outside the frame
    let depth = args.depth.unwrap_or(g.mount_height_m);
    if !(depth > 0.0 && depth.is_finite()) {
        bail!("depth must be positive and finite, got {depth}");
    }
    let plane = g.pixel_to_plane_at(px, depth);
    let pose = g.solve_pan_tilt_at_depth(plane, depth);
    let (pan_cmd, tilt_cmd) = g.normalize(pose)?;
    if args.json {
        let out = json!({
            "pixel": [px.u, px.v],
            "depth_m": depth,
            "plane_m": [plane.x, plane.y],
            "pan_deg": pose.phi_deg,
            "tilt_deg": pose.theta_deg,
            "pan_cmd": pan_cmd,
            "tilt_cmd": tilt_cmd,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("pixel   ({:.1}, {:.1}) at {depth:.2} m", px.u, px.v);
        println!("plane   x {:+.4} m, y {:+.4} m", plane.x, plane.y);
        println!(
            "pose    pan {:+.3} deg, tilt {:+.3} deg",
            pose.phi_deg, pose.theta_deg
        );
        println!("command pan {pan_cmd:+.4}, tilt {tilt_cmd:+.4}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Pipeline configuration (TOML)
    #[arg(long, env = "ROCKWATCH_CONFIG")]
    config: PathBuf,
    /// Target pixel as "u,v"
    #[arg(long, value_parser = parse_pixel)]
    target_px: (f64, f64),
    /// True surface depth of the simulated scene in meters
    #[arg(long)]
    depth: f64,
    /// Uniform dot-centroid jitter amplitude in pixels
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Jitter seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the outcome as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config = PipelineConfig::load(&args.config)?;
    let g = config.geometry()?;
    let px = PixelPoint::new(args.target_px.0, args.target_px.1);
    g.pixel_to_plane(px)?;
    if !(args.depth > 0.0 && args.depth.is_finite()) {
        bail!("depth must be positive and finite, got {}", args.depth);
    }
    let mut rig = FlatSceneRig::new(g.clone(), args.depth);
    if args.noise_px > 0.0 {
        rig = rig.with_noise(args.noise_px, args.seed);
    }
    let state = track(&g, &config.tracking, px, &mut rig)?;
    if args.json {
        let out = json!({
            "status": state.status,
            "corrections": state.iteration,
            "final_error_px": state.last_error_px,
            "pan_deg": state.pose.phi_deg,
            "tilt_deg": state.pose.theta_deg,
            "frame_pairs": rig.frame_pairs_served,
            "laser_doused": rig.laser_doused,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "{:?} after {} corrections, final error {:.2} px",
            state.status, state.iteration, state.last_error_px
        );
        println!(
            "pose    pan {:+.3} deg, tilt {:+.3} deg ({} frame pairs, laser doused: {})",
            state.pose.phi_deg, state.pose.theta_deg, rig.frame_pairs_served, rig.laser_doused
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum TransferArg {
    /// Write a PNG to a temp file and send its path
    TempFile,
    /// Embed the PNG in the request as base64
    Base64,
}

#[derive(Args)]
struct DetectArgs {
    /// Image to analyze
    #[arg(long)]
    image: PathBuf,
    /// Tile edge in pixels
    #[arg(long, default_value_t = 640)]
    patch: u32,
    /// IoU threshold for cross-tile merging
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// External detector argv after "--"; omit to use the built-in stub
    #[arg(last = true, value_name = "DETECTOR_ARGV")]
    command: Vec<String>,
    /// External detector response deadline in milliseconds
    #[arg(long, default_value_t = 2000)]
    timeout_ms: u64,
    /// How the image reaches an external detector
    #[arg(long, value_enum, default_value_t = TransferArg::TempFile)]
    transfer: TransferArg,
    /// Also write the detections as an annotation manifest
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print detections as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let img = image::open(&args.image)
        .with_context(|| format!("open {}", args.image.display()))?;
    let mut detector: Box<dyn Detector> = if args.command.is_empty() {
        Box::new(StubDetector::default())
    } else {
        Box::new(ExternalDetector::new(ExternalDetectorConfig {
            command: args.command.clone(),
            timeout_ms: args.timeout_ms,
            transfer: match args.transfer {
                TransferArg::TempFile => ImageTransfer::TempFile,
                TransferArg::Base64 => ImageTransfer::Base64,
            },
        }))
    };
    let dets = sliced_inference(&img, detector.as_mut(), args.patch, args.iou)?;
    let records: Vec<BoxRecord> = dets.iter().map(BoxRecord::from_detection).collect();
    if let Some(out) = &args.out {
        let name = args
            .image
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let set = AnnotationSet {
            records: vec![AnnotationRecord {
                image: name,
                boxes: records.clone(),
            }],
        };
        set.save(out)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&records)?);
    } else {
        println!("{} detections", dets.len());
        for d in &dets {
            println!(
                "  class {} score {:.3} at x {:.1} y {:.1} w {:.1} h {:.1}",
                d.class_id, d.score, d.x, d.y, d.w, d.h
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// slice
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SliceArgs {
    /// Image to cut into patches
    #[arg(long)]
    image: PathBuf,
    /// Tile edge in pixels
    #[arg(long, default_value_t = 640)]
    patch: u32,
    /// Annotation manifest holding this image's boxes
    #[arg(long)]
    ann: Option<PathBuf>,
    /// Keep a clipped box only if this fraction of its area stays visible
    #[arg(long, default_value_t = 0.25)]
    min_visibility: f64,
    /// Directory receiving the patches (created if missing)
    #[arg(long)]
    out_dir: PathBuf,
    /// Print the layout as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_slice(args: SliceArgs) -> Result<()> {
    let img = image::open(&args.image)
        .with_context(|| format!("open {}", args.image.display()))?;
    let grid = plan_tiles(img.width(), img.height(), args.patch)?;
    let patches = slice(&img, &grid)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("create {}", args.out_dir.display()))?;
    let stem = file_stem(&args.image);
    let mut names = Vec::new();
    for (tile, patch_img) in grid.tiles.iter().zip(&patches) {
        let name = format!("{stem}_r{}c{}.png", tile.row, tile.col);
        patch_img
            .save(args.out_dir.join(&name))
            .with_context(|| format!("write {name}"))?;
        names.push(name);
    }
    let mut manifest = None;
    if let Some(ann_path) = &args.ann {
        let set = AnnotationSet::load(ann_path)?;
        let boxes = boxes_for(&set, &args.image)?;
        let per_tile = slice_annotations(&boxes, &grid, args.min_visibility);
        let records = names
            .iter()
            .zip(&per_tile)
            .map(|(name, dets)| AnnotationRecord {
                image: name.clone(),
                boxes: dets.iter().map(BoxRecord::from_detection).collect(),
            })
            .collect();
        let path = args.out_dir.join("tiles.json");
        AnnotationSet { records }.save(&path)?;
        manifest = Some(path);
    }
    let rows = grid.tiles.iter().map(|t| t.row).max().map_or(0, |r| r + 1);
    let cols = grid.tiles.iter().map(|t| t.col).max().map_or(0, |c| c + 1);
    if args.json {
        let out = json!({
            "patch": grid.patch,
            "rows": rows,
            "cols": cols,
            "overlap_x_px": grid.overlap_x_px,
            "overlap_y_px": grid.overlap_y_px,
            "tiles": names,
            "annotations": manifest,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "{} tiles ({rows}x{cols} grid, overlap {} x, {} y) written to {}",
            names.len(),
            grid.overlap_x_px,
            grid.overlap_y_px,
            args.out_dir.display()
        );
        if let Some(path) = manifest {
            println!("tile annotations: {}", path.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AugmentArgs {
    /// Source image
    #[arg(long)]
    image: PathBuf,
    /// Annotation manifest holding the source image's boxes
    #[arg(long)]
    ann: Option<PathBuf>,
    /// Number of augmented samples to generate
    #[arg(long)]
    count: u32,
    /// Stream seed; (seed, sample index) fully determines each sample
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Elastic deformation strength; 0 disables warping
    #[arg(long, default_value_t = 30.0)]
    elastic_alpha: f64,
    /// CLAHE clip limit; 0 means unclipped adaptive equalization
    #[arg(long, default_value_t = 2.0)]
    clahe_clip: f64,
    /// Directory receiving samples, annotations.json, and traces.json
    #[arg(long)]
    out_dir: PathBuf,
    /// Print the output layout as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let img = image::open(&args.image)
        .with_context(|| format!("open {}", args.image.display()))?
        .to_rgb8();
    let boxes = match &args.ann {
        Some(path) => boxes_for(&AnnotationSet::load(path)?, &args.image)?,
        None => Vec::new(),
    };
    let base = AnnotatedImage { image: img, boxes };
    let cfg = AugmentConfig {
        seed: args.seed,
        elastic_alpha: args.elastic_alpha,
        clahe_clip_limit: (args.clahe_clip > 0.0).then_some(args.clahe_clip),
        ..AugmentConfig::default()
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("create {}", args.out_dir.display()))?;
    let stem = file_stem(&args.image);
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for i in 0..u64::from(args.count) {
        let (sample, trace) = apply_pipeline(&base, &cfg, i)?;
        let name = format!("{stem}_aug{i:03}.png");
        sample
            .image
            .save(args.out_dir.join(&name))
            .with_context(|| format!("write {name}"))?;
        records.push(AnnotationRecord {
            image: name,
            boxes: sample.boxes.iter().map(BoxRecord::from_detection).collect(),
        });
        traces.push(trace);
    }
    let ann_path = args.out_dir.join("annotations.json");
    AnnotationSet { records }.save(&ann_path)?;
    let trace_path = args.out_dir.join("traces.json");
    write_pretty_json(&trace_path, &traces)?;
    if args.json {
        let out = json!({
            "count": args.count,
            "out_dir": args.out_dir,
            "annotations": ann_path,
            "traces": trace_path,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "{} samples written to {} (annotations.json, traces.json)",
            args.count,
            args.out_dir.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// dedup
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DedupArgs {
    /// Directory to scan recursively
    #[arg(long)]
    dir: PathBuf,
    /// Similarity threshold in [0, 1]
    #[arg(long, default_value_t = 0.98)]
    threshold: f64,
    /// Write the full manifest here as JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the full manifest as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_dedup(args: DedupArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        bail!("threshold must be in [0, 1], got {}", args.threshold);
    }
    let manifest = dedup::scan(&args.dir, args.threshold)?;
    if let Some(out) = &args.out {
        write_pretty_json(out, &manifest)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
    } else {
        println!(
            "{} files scanned, {} hashed, {} singletons, {} duplicate groups",
            manifest.scanned,
            manifest.hashed,
            manifest.singletons,
            manifest.groups.len()
        );
        for g in &manifest.groups {
            println!(
                "  keep {} drop {} (min similarity {:.4})",
                g.keep,
                g.drop.join(" "),
                g.pairwise_min_similarity
            );
        }
        for e in &manifest.errors {
            println!("  unreadable {}: {}", e.path, e.error);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// Prediction manifest (annotation JSON with scores)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth manifest (annotation JSON)
    #[arg(long)]
    gt: PathBuf,
    /// IoU threshold for a match
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Print the full report as JSON
    #[arg(long)]
    json: bool,
}

/// Keeps boxes from different images unmatchable inside the single-pool
/// matcher: wider than any plausible frame.
const IMAGE_OFFSET_PX: f64 = 1e7;

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.iou) {
        bail!("iou must be in [0, 1], got {}", args.iou);
    }
    let pred_set = AnnotationSet::load(&args.pred)?;
    let gt_set = AnnotationSet::load(&args.gt)?;
    let mut images: Vec<&str> = pred_set
        .records
        .iter()
        .chain(&gt_set.records)
        .map(|r| r.image.as_str())
        .collect();
    images.sort_unstable();
    images.dedup();
    // Shift each image's boxes onto a private span of the x axis so matching
    // never pairs boxes across images.
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (i, name) in images.iter().enumerate() {
        let offset = i as f64 * IMAGE_OFFSET_PX;
        if let Some(r) = pred_set.find(name) {
            preds.extend(r.detections().into_iter().map(|mut d| {
                d.x += offset;
                d
            }));
        }
        if let Some(r) = gt_set.find(name) {
            gts.extend(r.detections().into_iter().map(|mut d| {
                d.x += offset;
                d
            }));
        }
    }
    let report = evaluate(&preds, &gts, args.iou);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "{} images, {} predictions, {} ground truths at IoU {}",
            images.len(),
            report.predictions,
            report.ground_truths,
            report.iou_threshold
        );
        println!(
            "precision {:.4}, recall {:.4}, AP {:.4} (TP {}, FP {}, FN {})",
            report.precision,
            report.recall,
            report.average_precision,
            report.true_positives,
            report.false_positives,
            report.false_negatives
        );
        for (label, bucket) in [
            ("small ", &report.small),
            ("medium", &report.medium),
            ("large ", &report.large),
        ] {
            match bucket.recall {
                Some(r) => println!(
                    "{label} recall {r:.4} ({}/{})",
                    bucket.matched, bucket.ground_truths
                ),
                None => println!("{label} recall n/a (no ground truths)"),
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReplayArgs {
    /// Event log (JSON lines) produced by `run`
    #[arg(long)]
    log: PathBuf,
    /// Consecutive detection frames required to open an episode
    #[arg(long, default_value_t = 1)]
    debounce_enter: u32,
    /// Consecutive clear frames required to close an episode
    #[arg(long, default_value_t = 3)]
    clear_after: u32,
    /// Print the verdict as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let events =
        read_events(&args.log).with_context(|| format!("read {}", args.log.display()))?;
    let frames: Vec<Vec<Detection>> = events.iter().map(|e| e.detections.clone()).collect();
    let params = StepParams {
        debounce_enter_frames: args.debounce_enter,
        clear_after_frames: args.clear_after,
    };
    let replayed = replay_transitions(&frames, &params);
    let mismatched: Vec<u64> = events
        .iter()
        .zip(&replayed)
        .filter(|(e, (from, to))| e.from != *from || e.to != *to)
        .map(|(e, _)| e.frame_id)
        .collect();
    if args.json {
        let out = json!({
            "events": events.len(),
            "mismatched_frames": mismatched,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        for e in &events {
            if e.from != e.to {
                println!("frame {}: {:?} -> {:?}", e.frame_id, e.from, e.to);
            }
        }
        println!("replayed {} events", events.len());
    }
    if !mismatched.is_empty() {
        bail!(
            "event log disagrees with the state machine at frames {mismatched:?} \
             (was it recorded with debounce {} / clear-after {}?)",
            args.debounce_enter,
            args.clear_after
        );
    }
    Ok(())
}
