use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use unsir_core::{SplitMix64, Tape, Tensor};

fn conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let mut rng = SplitMix64::new(1);
    let x = Tensor::randn(&[16, 32, 16, 16], &mut rng);
    let k = Tensor::randn(&[64, 32, 4, 4], &mut rng);
    group.bench_function("forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone()).unwrap();
            let kv = tape.leaf(k.clone()).unwrap();
            black_box(tape.conv2d(xv, kv, 2, 1).unwrap());
        })
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone().with_requires_grad(true)).unwrap();
            let kv = tape.leaf(k.clone().with_requires_grad(true)).unwrap();
            let y = tape.conv2d(xv, kv, 2, 1).unwrap();
            let loss = tape.sum(y).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(kv).map(|g| g[0]));
        })
    });
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = SplitMix64::new(2);
    for n in [64usize, 256] {
        let a = Tensor::randn(&[n, n], &mut rng);
        let b2 = Tensor::randn(&[n, n], &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let av = tape.leaf(a.clone()).unwrap();
                let bv = tape.leaf(b2.clone()).unwrap();
                black_box(tape.matmul(av, bv).unwrap());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv2d, matmul);
criterion_main!(benches);
