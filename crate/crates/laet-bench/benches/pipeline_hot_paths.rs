//! Benchmarks for the hot paths: kernels, forward passes, training steps,
//! selection, voting, and checkpoint serialization.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use laet_core::datakit::{Example, Target};
use laet_core::ensemble::majority_vote;
use laet_core::finetune::{finetune, FinetuneConfig};
use laet_core::harness::checkpoint::{checkpoint_bytes, checkpoint_from_bytes};
use laet_core::model::{LayeredModel, ModelConfig, Strategy};
use laet_core::numerics::{matmul, softmax, Tensor};
use laet_core::probe::{HeadKind, LayerMetricsRow, LayerMetricsTable, ProbeClassifier};
use laet_core::selection::{select, SelectionConfig, SelectionResult, SelectionStrategy};

fn bench_matmul(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(1);
    let mut group = c.benchmark_group("matmul");
    for (m, k, n) in [(64, 64, 64), (1024, 64, 128)] {
        let a = Tensor::rand_uniform(vec![m, k], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(vec![k, n], -1.0, 1.0, &mut rng);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{m}x{k}x{n}")),
            &(a, b),
            |bench, (a, b)| bench.iter(|| black_box(matmul(a, b))),
        );
    }
    group.finish();
}

fn bench_softmax(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(2);
    let logits: Vec<f64> = (0..4096).map(|_| rng.gen_range(-4.0..4.0)).collect();
    c.bench_function("softmax_4096", |b| {
        b.iter(|| black_box(softmax(black_box(&logits)).unwrap()))
    });
}

fn bench_forward(c: &mut Criterion) {
    let model = LayeredModel::new(ModelConfig::default(), 7).unwrap();
    let tokens: Vec<u32> = (0..32).map(|i| (i * 5 % 250) as u32).collect();
    c.bench_function("forward_n32_d64_l8", |b| {
        b.iter(|| black_box(model.forward_all_layers(black_box(&tokens)).unwrap()))
    });
}

fn bench_train_step(c: &mut Criterion) {
    let tokens: Vec<u32> = (0..32).map(|i| (i * 5 % 250) as u32).collect();
    let examples: Vec<Example> = (0..8)
        .map(|i| Example {
            tokens: tokens.clone(),
            target: Target::Class(i % 3),
        })
        .collect();
    let selection = SelectionResult {
        selected: vec![3, 4],
        sigma_m1: 0.0,
        sigma_m2: 0.0,
        delta_m1: 0.0,
        delta_m2: 0.0,
        strategy: SelectionStrategy::Dominance,
        fallback: false,
    };
    let config = FinetuneConfig {
        epochs: 1,
        batch_size: 8,
        seed: 1,
        ..Default::default()
    };
    c.bench_function("finetune_batch8_b2", |b| {
        b.iter(|| {
            let mut model = LayeredModel::new(ModelConfig::default(), 7).unwrap();
            let mut clf = ProbeClassifier::new(64, HeadKind::Classes(3), 7);
            finetune(
                &mut model,
                &mut clf,
                &selection,
                &examples,
                Strategy::Lt,
                &config,
            )
            .unwrap()
        })
    });
}

fn bench_selection(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(3);
    let table = LayerMetricsTable {
        rows: (1..=32)
            .map(|layer| LayerMetricsRow {
                layer,
                m1: rng.gen_range(0.0..1.0),
                m2: rng.gen_range(0.0..1.0),
            })
            .collect(),
    };
    let mut group = c.benchmark_group("selection_l32");
    for strategy in [
        SelectionStrategy::Dominance,
        SelectionStrategy::Threshold,
        SelectionStrategy::FirstStd,
    ] {
        group.bench_function(strategy.name(), |b| {
            let cfg = SelectionConfig {
                alpha: 0.5,
                beta: 0.5,
                strategy,
            };
            b.iter(|| black_box(select(black_box(&table), &cfg).unwrap()))
        });
    }
    group.finish();
}

fn bench_majority_vote(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(4);
    let votes: Vec<(usize, Vec<f64>)> = (0..15)
        .map(|_| {
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let probs = softmax(&logits).unwrap();
            (
                probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0,
                probs,
            )
        })
        .collect();
    c.bench_function("majority_vote_15", |b| {
        b.iter(|| black_box(majority_vote(black_box(&votes)).unwrap()))
    });
}

fn bench_checkpoint(c: &mut Criterion) {
    let model = LayeredModel::new(
        ModelConfig {
            layers: 4,
            dim: 32,
            heads: 4,
            context: 64,
        },
        9,
    )
    .unwrap();
    let clf = ProbeClassifier::new(32, HeadKind::Classes(3), 9);
    c.bench_function("checkpoint_round_trip", |b| {
        b.iter(|| {
            let bytes = checkpoint_bytes(&model, &clf);
            black_box(checkpoint_from_bytes(&bytes).unwrap())
        })
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_softmax,
    bench_forward,
    bench_train_step,
    bench_selection,
    bench_majority_vote,
    bench_checkpoint
);
criterion_main!(benches);
