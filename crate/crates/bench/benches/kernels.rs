use std::hint::black_box;

use byola_core::augment::{random_resize_crop, RrcConfig};
use byola_core::byol::{train_step, ByolConfig, ModelState};
use byola_core::encoder::EncoderConfig;
use byola_core::eval::{train_probe, EmbeddingTable, Partition, ProbeConfig};
use byola_core::frontend::{logmel, FrontendConfig};
use byola_core::{AudioClip, Spectrogram, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frontend(c: &mut Criterion) {
    let cfg = FrontendConfig::default();
    let samples: Vec<f32> = (0..16_000).map(|i| (i as f32 * 0.0563).sin() * 0.5).collect();
    let clip = AudioClip::new(samples, cfg.sample_rate).unwrap();
    c.bench_function("logmel 1s", |b| b.iter(|| logmel::<f32>(black_box(&clip), &cfg).unwrap()));
}

fn augment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Spectrogram::new(64, 96, (0..64 * 96).map(|_| rng.random_range(-3.0f32..3.0)).collect()).unwrap();
    let cfg = RrcConfig::default();
    c.bench_function("random resize crop 64x96", |b| {
        b.iter(|| random_resize_crop(black_box(&x), &cfg, &mut rng).unwrap())
    });
}

fn train(c: &mut Criterion) {
    let cfg = ByolConfig {
        encoder: EncoderConfig {
            channels: 16,
            mlp_hidden: 128,
            ..EncoderConfig::default()
        },
        head_hidden: 128,
        projection_dim: 64,
        ..ByolConfig::default()
    };
    let mut state = ModelState::<f32>::new(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (b, t) = (8, 32);
    let mut view = || Tensor::new(vec![b, 1, 64, t], (0..b * 64 * t).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let (v1, v2) = (view(), view());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("byol");
    group.sample_size(10);
    group.bench_function("train step 8x64x32", |bch| {
        bch.iter(|| train_step(&mut state, black_box(&v1), black_box(&v2), &mut rng).unwrap())
    });
    group.finish();
}

fn probe(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (n, dim) = (200, 64);
    let labels: Vec<Vec<String>> = (0..n).map(|i| vec![format!("c{}", i % 4)]).collect();
    let values = (0..n * dim)
        .map(|k| rng.random_range(-1.0..1.0) + if k % dim == (k / dim) % 4 { 2.0 } else { 0.0 })
        .collect();
    let partition = (0..n)
        .map(|i| Partition::Split(["train", "train", "valid", "test"][i % 4].parse().unwrap()))
        .collect();
    let table = EmbeddingTable::new((0..n).map(|i| i.to_string()).collect(), dim, values, labels, partition).unwrap();
    let cfg = ProbeConfig {
        runs: 1,
        learning_rate: Some(1e-2),
        ..ProbeConfig::default()
    };
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    group.bench_function("linear probe 200x64", |b| b.iter(|| train_probe(black_box(&table), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, frontend, augment, train, probe);
criterion_main!(benches);
