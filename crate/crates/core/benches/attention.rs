use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringformer::attention::{multi_head_attention, AttentionConfig, AttentionMode, ScoreTracker};
use ringformer::Tensor;

const HEADS: usize = 8;
const HEAD_DIM: usize = 16;

fn inputs(t: usize) -> [Tensor<f32>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
    [0, 1, 2].map(|_| Tensor::from_fn(&[t, HEADS * HEAD_DIM], |_| rng.random_range(-1.0..1.0)))
}

fn ring_vs_vanilla(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    for t in [256usize, 1024] {
        let [q, k, v] = inputs(t);
        let vanilla = AttentionConfig::new(t, t, HEADS, HEAD_DIM);
        group.bench_with_input(BenchmarkId::new("vanilla", t), &t, |bench, _| {
            bench.iter(|| {
                multi_head_attention(&q, &k, &v, &vanilla, AttentionMode::Vanilla, &ScoreTracker::new()).unwrap()
            })
        });
        for b in [64usize, 256] {
            let cfg = AttentionConfig::new(t, b, HEADS, HEAD_DIM);
            group.bench_with_input(BenchmarkId::new(format!("ring_b{b}"), t), &t, |bench, _| {
                bench.iter(|| {
                    multi_head_attention(black_box(&q), &k, &v, &cfg, AttentionMode::Ring, &ScoreTracker::new())
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ring_vs_vanilla);
criterion_main!(benches);
