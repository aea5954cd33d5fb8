use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssrp_core::features::{log_mel, AudioClip, MelConfig};
use ssrp_core::network::conv2d_forward;
use ssrp_core::pca::{symmetric_eigendecomposition, Matrix};
use ssrp_core::pooling::{gap_forward, ssrp_b_forward, ssrp_t_forward};
use ssrp_core::{FeatureMap, Tensor4};

fn random_map(c: usize, t: usize, f: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(c, t, f, |_, _, _| rng.random_range(-1.0..1.0))
}

fn pooling(c: &mut Criterion) {
    // Shape of the last conv block on a 5 s clip.
    let x = random_map(128, 107, 10, 1);
    let mut g = c.benchmark_group("pooling_128x107x10");
    g.bench_function("gap", |b| b.iter(|| gap_forward(black_box(&x))));
    for w in [2, 4, 8] {
        g.bench_with_input(BenchmarkId::new("ssrp_b", w), &w, |b, &w| b.iter(|| ssrp_b_forward(black_box(&x), w).unwrap()));
    }
    for k in [4, 12, 16] {
        g.bench_with_input(BenchmarkId::new("ssrp_t", k), &k, |b, &k| b.iter(|| ssrp_t_forward(black_box(&x), k).unwrap()));
    }
    g.finish();
}

fn jacobi(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("jacobi");
    for n in [16, 64] {
        let a = Matrix::from_vec(n, 2 * n, (0..2 * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let sym = a.gram_rows();
        g.bench_with_input(BenchmarkId::from_parameter(n), &sym, |b, s| {
            b.iter(|| symmetric_eigendecomposition(black_box(s)).unwrap())
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clip = AudioClip::new((0..5 * 44_100).map(|_| rng.random_range(-0.5f32..0.5)).collect(), 44_100).unwrap();
    let cfg = MelConfig::default();
    c.bench_function("log_mel_5s", |b| b.iter(|| log_mel(black_box(&clip), &cfg).unwrap()));
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, c_in, c_out, t, f) = (4, 8, 16, 64, 20);
    let x = Tensor4::new(n, c_in, t, f, (0..n * c_in * t * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w: Vec<f64> = (0..c_out * c_in * 9).map(|_| rng.random_range(-0.1..0.1)).collect();
    let bias = vec![0.0; c_out];
    c.bench_function("conv2d_forward_4x8x64x20_to_16", |b| {
        b.iter(|| conv2d_forward(black_box(&x), &w, &bias, c_out, 3).unwrap())
    });
}

criterion_group!(benches, pooling, jacobi, features, conv);
criterion_main!(benches);
