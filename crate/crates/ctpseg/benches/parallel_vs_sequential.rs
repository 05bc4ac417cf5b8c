//! Parallel-vs-sequential benchmarks over the hot paths: convolution
//! forward/backward, surface distances, and one full training step.
//!
//! With the default `parallel` feature, each workload runs once on the
//! default rayon pool and once pinned to a single thread; built with
//! `--no-default-features` the sequential fallback is measured directly.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use ctpseg::autodiff::{Tape, Tensor};
use ctpseg::data::{stack_slices, synth_generate, AugmentParams, Mask3, SynthConfig};
use ctpseg::losses::LossConfig;
use ctpseg::metrics::{assd, extract_surface, hausdorff};
use ctpseg::models::{Bound, Mode, Model, ModelConfig, PspConfig};
use ctpseg::nn::{conv2d, ConvSpec};
use ctpseg::train::foreground_prob;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .unwrap()
}

/// Run `f` on the default pool and on a single thread, so one report
/// shows the speedup. Without the parallel feature there is only the
/// sequential path.
fn with_flavors(c: &mut Criterion, name: &str, f: impl Fn() + Sync) {
    #[cfg(feature = "parallel")]
    {
        let mut group = c.benchmark_group(name);
        group.sample_size(10);
        group.bench_function("parallel", |b| b.iter(&f));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("single_thread", |b| b.iter(|| pool.install(&f)));
        group.finish();
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut group = c.benchmark_group(name);
        group.sample_size(10);
        group.bench_function("sequential_build", |b| b.iter(&f));
        group.finish();
    }
}

fn bench_conv_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, vec![8, 16, 32, 32]);
    let w = rand_tensor(&mut rng, vec![32, 16, 3, 3]);
    let spec = ConvSpec::new(3, 3).padding(1, 1);
    with_flavors(c, "conv2d_forward_8x16x32x32", || {
        let mut tape = Tape::new();
        let xid = tape.leaf(&x);
        let wid = tape.leaf(&w);
        let y = conv2d(&mut tape, xid, wid, None, &spec).unwrap();
        black_box(tape.value(y)[0]);
    });
}

fn bench_conv_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = rand_tensor(&mut rng, vec![4, 16, 32, 32]);
    x.set_requires_grad(true);
    let mut w = rand_tensor(&mut rng, vec![32, 16, 3, 3]);
    w.set_requires_grad(true);
    let spec = ConvSpec::new(3, 3).padding(1, 1);
    with_flavors(c, "conv2d_backward_4x16x32x32", || {
        let mut tape = Tape::new();
        let xid = tape.leaf(&x);
        let wid = tape.leaf(&w);
        let y = conv2d(&mut tape, xid, wid, None, &spec).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        black_box(grads.get(wid).unwrap()[0]);
    });
}

fn bench_surface_distances(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mask = |density: f64| -> Mask3 {
        let mut m = Mask3::zeros(4, 64, 64);
        for v in m.data.iter_mut() {
            *v = u8::from(rng.random_bool(density));
        }
        m
    };
    let a = mask(0.08);
    let b = mask(0.08);
    let spacing = [1.0, 1.0, 5.0];
    let sa = extract_surface(&a, spacing);
    let sb = extract_surface(&b, spacing);
    with_flavors(c, "surface_distances_4x64x64", || {
        let h = hausdorff(&sa, &sb).unwrap();
        let s = assd(&sa, &sb).unwrap();
        black_box((h, s));
    });
}

fn bench_training_step(c: &mut Criterion) {
    let scans = synth_generate(&SynthConfig {
        n_subjects: 2,
        size: (64, 64),
        seed: 4,
        ..Default::default()
    });
    let slices: Vec<_> = scans.iter().flat_map(stack_slices).take(8).collect();
    let stream = ctpseg::data::TrainStream {
        samples: slices,
        batch_size: 8,
        augment: AugmentParams { enabled: false, ..AugmentParams::default() },
        seed: 0,
    };
    let batch = stream.epoch_batches::<f32>(0).remove(0);
    let cfg = ModelConfig::Pspnet(PspConfig {
        backbone_channels: vec![8, 16, 24],
        n_psp: Some(6),
        head_channels: Some(12),
        input_size: (64, 64),
        ..PspConfig::default()
    });
    let loss_cfg = LossConfig::default();
    let model = Model::<f32>::build(&cfg, 5).unwrap();
    with_flavors(c, "pspnet_train_step_batch8_64x64", || {
        let mut m = model.clone();
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let x = tape.leaf(&batch.input);
        let logits = m.forward(&mut tape, &mut bound, x, Mode::Train).unwrap();
        let p = foreground_prob(&mut tape, logits).unwrap();
        let y = tape.leaf(&batch.label);
        let loss = loss_cfg.apply(&mut tape, p, y).unwrap();
        let grads = tape.backward(loss).unwrap();
        black_box(grads.get(x).is_some());
    });
}

criterion_group!(
    benches,
    bench_conv_forward,
    bench_conv_backward,
    bench_surface_distances,
    bench_training_step
);
criterion_main!(benches);
