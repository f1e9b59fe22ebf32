use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use unsir_core::data::{generate_synthetic_split, partition, CenterLayout, SyntheticSpec};
use unsir_core::models::{build_model, train, ModelSpec, TrainConfig};
use unsir_core::noise::{synthesize_noises, NoiseConfig};
use unsir_core::unsir::{unsir_unlearn, Probe, UnsirConfig};

fn setup() -> (unsir_core::models::Model, unsir_core::data::LabeledDataset, unsir_core::data::LabeledDataset) {
    let spec = SyntheticSpec {
        num_classes: 10,
        input_shape: vec![3, 16, 16],
        per_class: 60,
        separation: 8.0,
        noise_sigma: 1.0,
        tile: Some(4),
        layout: CenterLayout::Orthogonal,
    };
    let (train_ds, test_ds) = generate_synthetic_split(&spec, 20, 3).unwrap();
    let mut model = build_model(&ModelSpec::smallcnn(vec![3, 16, 16], vec![32, 64, 64], vec![1, 2, 2], 10, 4)).unwrap();
    let hp = TrainConfig {
        epochs: 2,
        batch_size: 64,
        lr: 0.05,
        momentum: 0.9,
        seed: 5,
    };
    train(&mut model, &train_ds, &hp).unwrap();
    (model, train_ds, test_ds)
}

fn noise_synthesis(c: &mut Criterion) {
    let (mut model, _, _) = setup();
    model.freeze();
    let classes: BTreeSet<usize> = [0].into();
    let cfg = NoiseConfig {
        batch: 16,
        ..NoiseConfig::default()
    };
    let mut group = c.benchmark_group("noise");
    group.sample_size(10);
    group.bench_function("synthesize_one_class_40_steps", |b| {
        b.iter(|| black_box(synthesize_noises(&model, &classes, &cfg).unwrap()))
    });
    group.finish();
}

fn impair_repair(c: &mut Criterion) {
    let (model, train_ds, test_ds) = setup();
    let p = partition(&train_ds, &[0]).unwrap();
    let tp = partition(&test_ds, &[0]).unwrap();
    let probe = Probe {
        forget: tp.forget_set(),
        retain: tp.retain_set(),
    };
    let cfg = UnsirConfig {
        batch_size: 16,
        retain_per_class: 30,
        noise: NoiseConfig {
            batch: 16,
            copies: 5,
            ..NoiseConfig::default()
        },
        ..UnsirConfig::default()
    };
    let mut group = c.benchmark_group("unsir");
    group.sample_size(10);
    group.bench_function("one_class_end_to_end", |b| {
        b.iter(|| black_box(unsir_unlearn(&model, &p, probe, &cfg).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, noise_synthesis, impair_repair);
criterion_main!(benches);
