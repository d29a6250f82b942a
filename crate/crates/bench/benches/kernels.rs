//! Hot-kernel benchmarks: convolution, pooling, routing, windowing.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use capstraffic_core::capsule::dynamic_routing;
use capstraffic_core::data::{make_windows, test_support::matrix_from_fn, ScalingStats};
use capstraffic_core::layers::{Conv2DLayer, PaddingKind};
use capstraffic_core::model::TaskSpec;
use capstraffic_core::{Tape, Tensor};

fn conv_stage2(c: &mut Criterion) {
    // The dominant CNN cost: 5x10x256 input through 128 3x3 kernels.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::uniform(&[5, 10, 256], 0.0, 1.0, &mut rng);
    let layer = Conv2DLayer::init(128, 3, 3, 256, 1, PaddingKind::Same, &mut rng);
    c.bench_function("conv2d 5x10x256 -> 128ch forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(black_box(input.clone()));
            let (y, _, _) = layer.forward(&mut tape, x).unwrap();
            black_box(tape.value(y).data()[0])
        })
    });
    c.bench_function("conv2d 5x10x256 -> 128ch forward+backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(black_box(input.clone()));
            let (y, k, _) = layer.forward(&mut tape, x).unwrap();
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.mean(sq);
            let grads = tape.backward(loss).unwrap();
            black_box(grads.get(k).unwrap().data()[0])
        })
    });
}

fn pooling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = Tensor::uniform(&[10, 20, 256], 0.0, 1.0, &mut rng);
    c.bench_function("maxpool2x2 10x20x256", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(black_box(input.clone()));
            let y = tape.maxpool2x2(x).unwrap();
            black_box(tape.value(y).data()[0])
        })
    });
}

fn routing(c: &mut Criterion) {
    // Reduced-width geometry: 400 input capsules to 20 outputs.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u_hat = Tensor::uniform(&[400, 20, 16], -0.5, 0.5, &mut rng);
    c.bench_function("dynamic_routing 400x20x16, 3 iterations", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let u = tape.leaf(black_box(u_hat.clone()));
            let (v, _) = dynamic_routing(&mut tape, u, 3).unwrap();
            black_box(tape.value(v).data()[0])
        })
    });
}

fn windowing(c: &mut Criterion) {
    let matrix = matrix_from_fn(96 * 30, 20, |r, s| 30.0 + ((r * 7 + s) % 50) as f64, |_, _| false);
    let task = TaskSpec::by_name("task1").unwrap();
    let stats = ScalingStats { min: 0.0, max: 100.0 };
    c.bench_function("make_windows 30 days x 20 sensors", |b| {
        b.iter(|| black_box(make_windows(&matrix, &task, &stats).unwrap().len()))
    });
}

criterion_group!(benches, conv_stage2, pooling, routing, windowing);
criterion_main!(benches);
