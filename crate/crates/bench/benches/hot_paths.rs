//! Hot paths, benched at the shapes the pipeline actually runs: VGA frames
//! for per-frame stages, full HD for the tiled path.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rockwatch_bench::{full_hd_scene, random_detections, rig, vga_scene};
use rockwatch_core::augment::{apply_pipeline, clahe_rgb, elastic, AnnotatedImage, AugmentConfig};
use rockwatch_core::dedup;
use rockwatch_core::detector::{Detector, StubDetector};
use rockwatch_core::eval::evaluate;
use rockwatch_core::slicing::{merge, plan_tiles, slice, sliced_inference};
use rockwatch_core::tracking::{track, FlatSceneRig, TrackingParams};
use rockwatch_core::PixelPoint;

fn per_frame(c: &mut Criterion) {
    let vga = vga_scene();
    c.bench_function("dhash_vga", |b| {
        b.iter(|| dedup::dhash(black_box(&vga)).unwrap())
    });

    let mut stub = StubDetector::default();
    c.bench_function("stub_detect_vga", |b| {
        b.iter(|| stub.detect(black_box(&vga)).unwrap())
    });

    let dets = random_detections(500, 42);
    c.bench_function("merge_500_boxes", |b| {
        b.iter(|| merge(black_box(&dets), 0.5))
    });

    let g = rig();
    let target = PixelPoint::new(500.0, 130.0);
    c.bench_function("solve_pan_tilt", |b| {
        b.iter(|| {
            let plane = g.pixel_to_plane(black_box(target)).unwrap();
            g.solve_pan_tilt(plane)
        })
    });

    let params = TrackingParams::default();
    c.bench_function("track_flat_scene", |b| {
        b.iter(|| {
            let mut scene = FlatSceneRig::new(g.clone(), 1.4);
            track(&g, &params, black_box(target), &mut scene).unwrap()
        })
    });

    let preds = random_detections(300, 1);
    let gts = random_detections(200, 2);
    c.bench_function("evaluate_300_preds", |b| {
        b.iter(|| evaluate(black_box(&preds), black_box(&gts), 0.5))
    });
}

fn full_frame(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_frame");
    group.sample_size(10).measurement_time(Duration::from_secs(8));

    let (hd, _) = full_hd_scene();
    group.bench_function("plan_and_slice_full_hd", |b| {
        b.iter(|| {
            let grid = plan_tiles(hd.width(), hd.height(), 640).unwrap();
            slice(black_box(&hd), &grid).unwrap()
        })
    });

    let mut stub = StubDetector::default();
    group.bench_function("sliced_inference_full_hd", |b| {
        b.iter(|| sliced_inference(black_box(&hd), &mut stub, 640, 0.5).unwrap())
    });

    let vga = vga_scene().to_rgb8();
    group.bench_function("clahe_vga", |b| {
        b.iter(|| clahe_rgb(black_box(&vga), Some(2.0), (8, 8)).unwrap())
    });

    let annotated = AnnotatedImage {
        image: vga.clone(),
        boxes: Vec::new(),
    };
    group.bench_function("elastic_vga", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            elastic(black_box(&annotated), 30.0, 6.0, &mut rng)
        })
    });

    let cfg = AugmentConfig::default();
    group.bench_function("augment_pipeline_vga", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            apply_pipeline(black_box(&annotated), &cfg, i).unwrap()
        })
    });

    group.finish();
}

criterion_group!(benches, per_frame, full_frame);
criterion_main!(benches);
