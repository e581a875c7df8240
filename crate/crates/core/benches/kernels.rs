//! Single-thread vs. pooled throughput of the hot kernels.
//!
//! Each benchmark runs once pinned to one worker and once on a pool sized to
//! the machine. Built with `--no-default-features`, both variants run the
//! sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spartan::blocks::{Block, BlockSpec, ConvType};
use spartan::nn::{Ctx, Mode, Module};
use spartan::tensor::kernels::{conv2d_forward, ConvGeometry};
use spartan::{par, ConvSpec, Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(&mut rng))
}

fn thread_counts() -> Vec<usize> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn conv(c: &mut Criterion) {
    let cases = [
        ("full3x3", [16, 64, 28, 28], 64, 3, ConvSpec::same(3, 1, 1)),
        ("depthwise3x3", [16, 192, 14, 14], 192, 3, ConvSpec::same(3, 1, 192)),
        ("pointwise", [16, 96, 14, 14], 192, 1, ConvSpec::default()),
    ];
    let mut group = c.benchmark_group("conv2d_forward");
    for (name, xs, cout, k, spec) in cases {
        let x = random(&xs, 1);
        let w = random(&[cout, xs[1] / spec.groups, k, k], 2);
        let geo = ConvGeometry::new(x.shape(), w.shape(), spec).unwrap();
        group.throughput(Throughput::Elements(geo.macs()));
        for threads in thread_counts() {
            group.bench_with_input(BenchmarkId::new(name, format!("{threads}t")), &threads, |b, &t| {
                par::with_threads(t, || b.iter(|| conv2d_forward(&geo, x.data(), w.data(), None)))
            });
        }
    }
    group.finish();
}

fn block(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = BlockSpec { conv_type: ConvType::Depthwise, se_reduction: 16, ..BlockSpec::new(96, 2) };
    let block = Block::<f32>::new("b", &spec, &mut rng).unwrap();
    let x = random(&[8, 96, 14, 14], 3);
    let mut group = c.benchmark_group("block_train_step");
    group.sample_size(20);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::new("c96_14x14", format!("{threads}t")), &threads, |b, &t| {
            par::with_threads(t, || {
                b.iter(|| {
                    let tape = Tape::new();
                    let ctx = Ctx::new(&tape, Mode::Train);
                    let y = block.forward(&ctx, tape.leaf(x.clone(), true)).unwrap();
                    tape.backward(y.sum().unwrap()).unwrap();
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, block);
criterion_main!(benches);
