use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use homeloc_core::model::{train, TrainConfig};
use homeloc_core::segmentation::{generate_training_set, SegmentConfig};
use homeloc_core::synth::{generate, SynthConfig, SYNTH_TAG};
use homeloc_core::{ModelConfig, ModelKind, Tech, WindowMode, WindowSpec};

fn inference(c: &mut Criterion) {
    let ds = generate(&SynthConfig {
        duration_s: 300.0,
        ..SynthConfig::default()
    });
    let window = WindowSpec::new(12.0, 1.0, WindowMode::PastAndFuture).unwrap();
    let cfg = SegmentConfig::new(window, ds.floorplan.roster(Tech::Uwb), SYNTH_TAG).with_tech(Tech::Uwb);
    let set = generate_training_set(&ds.streams(), &ds.labels, &ds.floorplan, &cfg).unwrap();
    let budget = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let frame = &set.samples[set.len() / 2].frame;
    let batch: Vec<_> = set.samples.iter().take(64).map(|s| &s.frame).collect();

    let mut group = c.benchmark_group("predict");
    for kind in [
        ModelKind::Knn,
        ModelKind::Rf,
        ModelKind::Cnn,
        ModelKind::CnnLstm,
        ModelKind::CnnLstmAttention,
    ] {
        let model = train(&ModelConfig::regression(kind, 7), &budget, &set).unwrap();
        group.bench_function(format!("{}_one", kind.label()), |b| {
            b.iter(|| model.predict_one(black_box(frame)).unwrap())
        });
        group.bench_function(format!("{}_batch64", kind.label()), |b| {
            b.iter(|| model.predict(black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, inference);
criterion_main!(benches);
