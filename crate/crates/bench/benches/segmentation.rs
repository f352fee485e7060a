use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use homeloc_core::segmentation::{aggregate_window, build_feature_frame, generate_training_set, SegmentConfig};
use homeloc_core::synth::{generate, SynthConfig, SYNTH_TAG};
use homeloc_core::{Tech, WindowMode, WindowSpec};

fn segmentation(c: &mut Criterion) {
    let ds = generate(&SynthConfig {
        duration_s: 300.0,
        ..SynthConfig::default()
    });
    let streams = ds.streams();
    let roster = ds.floorplan.roster(Tech::Uwb);
    let window = WindowSpec::new(12.0, 1.0, WindowMode::PastAndFuture).unwrap();
    let readings = streams.get(&roster[0], SYNTH_TAG).unwrap().readings();
    let t_mid = ds.labels[ds.labels.len() / 2].t_ms;

    c.bench_function("aggregate_window_1s", |b| {
        b.iter(|| aggregate_window(black_box(readings), t_mid, t_mid + 1000))
    });
    c.bench_function("build_feature_frame_12s", |b| {
        b.iter(|| build_feature_frame(&streams, SYNTH_TAG, &roster, &window, black_box(t_mid)).unwrap())
    });
    let cfg = SegmentConfig::new(window, roster.clone(), SYNTH_TAG).with_tech(Tech::Uwb);
    let mut group = c.benchmark_group("training_set");
    group.sample_size(10);
    group.bench_function("generate_300s", |b| {
        b.iter(|| generate_training_set(&streams, &ds.labels, &ds.floorplan, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, segmentation);
criterion_main!(benches);
