use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tcm_bench::{filled, head, tcm_fixture};
use tcm_core::autodiff::{AdamW, AdamWConfig, Tape};
use tcm_core::objective::Classifier;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32usize, 128, 256] {
        let (a, b) = (filled(n, n), filled(n, n));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
                let z = tape.matmul(x, y).unwrap();
                black_box(tape.value(z).numel())
            })
        });
    }
    g.finish();
}

fn encoder_forward(c: &mut Criterion) {
    let (model, split) = tcm_fixture();
    let (batch, _) = head(&split, 8);
    c.bench_function("encoder_forward_batch8", |bench| {
        bench.iter(|| black_box(model.encoder().encode(model.store(), &batch).unwrap()))
    });
}

fn tcm_step(c: &mut Criterion) {
    let (mut model, split) = tcm_fixture();
    let (batch, targets) = head(&split, 8);
    let mut opt = AdamW::new(AdamWConfig::default());
    let ids = model.trainable();
    c.bench_function("tcm_train_step_40_labels", |bench| {
        bench.iter(|| {
            model.store_mut().zero_grad();
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &batch, &targets, None).unwrap();
            tape.backward(loss, model.store_mut()).unwrap();
            opt.step(model.store_mut(), &ids).unwrap();
        })
    });
}

criterion_group!(benches, matmul, encoder_forward, tcm_step);
criterion_main!(benches);
