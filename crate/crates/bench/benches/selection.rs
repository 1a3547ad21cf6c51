use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lss_bench::random_logits;
use lss_core::gumbel::{gumbel_softmax, gumbel_top_k, GumbelNoise};
use lss_core::select::{build_sample_map, relative_distance_divide, select_train_with_noise};
use lss_core::TrainMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_train");
    for side in [3usize, 7, 15] {
        let logits = random_logits(side, 1);
        let noise = GumbelNoise::from_seed(side, 2);
        group.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, _| {
            b.iter(|| select_train_with_noise(black_box(&logits), &noise, 1.0, TrainMode::Lss, false).unwrap())
        });
    }
    group.finish();

    let logits = random_logits(7, 3);
    let noise = GumbelNoise::from_seed(7, 4);
    let soft = gumbel_softmax(&logits.values, &noise, 1.0).unwrap();
    c.bench_function("relative_distance_divide/7", |b| {
        b.iter(|| relative_distance_divide(black_box(&soft)).unwrap())
    });
    let divider = relative_distance_divide(&soft).unwrap();
    c.bench_function("build_sample_map/7", |b| {
        b.iter(|| build_sample_map(black_box(&soft), &divider, false))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    c.bench_function("gumbel_top_k/49/5", |b| {
        b.iter(|| gumbel_top_k(black_box(logits.values.values()), 5, &mut rng).unwrap())
    });
}

criterion_group!(benches, selection);
criterion_main!(benches);
