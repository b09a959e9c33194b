//! Full mel-to-waveform synthesis on the shared rayon pool versus a
//! single-thread pool. Building with `--no-default-features` replaces the
//! rayon paths with plain loops altogether.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringformer::dsp::MelSpectrogram;
use ringformer::generator::{build_generator, synthesize, GeneratorConfig};
use ringformer::Tensor;

fn random_mel(frames: usize) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    MelSpectrogram::new(
        Tensor::from_fn(&[80, frames], |_| rng.random_range(-8.0..2.0)),
        22050,
        256,
    )
    .unwrap()
}

fn parallel_vs_sequential(c: &mut Criterion) {
    let weights = build_generator(&GeneratorConfig::default()).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let label = if ringformer::parallel::enabled() {
        "rayon"
    } else {
        "sequential"
    };

    let mut group = c.benchmark_group("synthesis");
    group.sample_size(10);
    for frames in [8usize, 32] {
        let mel = random_mel(frames);
        group.bench_with_input(BenchmarkId::new(label, frames), &mel, |b, mel| {
            b.iter(|| synthesize(black_box(mel), &weights).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("one_thread", frames), &mel, |b, mel| {
            b.iter(|| single.install(|| synthesize(black_box(mel), &weights).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, parallel_vs_sequential);
criterion_main!(benches);
