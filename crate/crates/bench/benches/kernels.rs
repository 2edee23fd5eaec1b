use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use speller_core::models::{CharRnn, CharRnnConfig, Eegnet, EegnetConfig};
use speller_core::numcore::{conv2d, Adam, LossKind, Padding};
use speller_core::sigproc::{design_cheby1, filtfilt, FilterSpec};
use speller_bench::{contexts, sequences, signal, trace};

fn bench_conv(c: &mut Criterion) {
    let x = signal(&[16, 1, 64, 250]);
    let k = signal(&[8, 1, 1, 64]);
    c.bench_function("conv2d temporal 16x64x250", |b| {
        b.iter(|| conv2d(black_box(&x), &k, Padding::Same).unwrap())
    });
}

fn bench_filter(c: &mut Criterion) {
    let spec = FilterSpec::default();
    let sos = design_cheby1(&spec).unwrap();
    let x = trace(1500);
    c.bench_function("cheby1 design", |b| b.iter(|| design_cheby1(black_box(&spec)).unwrap()));
    c.bench_function("filtfilt 1500 samples", |b| b.iter(|| filtfilt(&sos, black_box(&x)).unwrap()));
}

fn bench_eegnet(c: &mut Criterion) {
    let mut model = Eegnet::init(EegnetConfig::default(), 1).unwrap();
    let x = signal(&[16, 1, 64, 250]);
    let y: Vec<usize> = (0..16).map(|i| i % 40).collect();
    // one step fills the batch-norm running statistics used at inference
    model.train_step(&mut Adam::new(), &x, &y, LossKind::CrossEntropy, 1e-3, 1).unwrap();
    c.bench_function("eegnet predict batch 16", |b| b.iter(|| model.predict_proba(black_box(&x)).unwrap()));
    let mut g = c.benchmark_group("slow");
    g.sample_size(10);
    let mut train = model.clone();
    let mut adam = Adam::new();
    g.bench_function("eegnet train step batch 16", |b| {
        b.iter(|| train.train_step(&mut adam, &x, &y, LossKind::CrossEntropy, 1e-3, 1).unwrap())
    });
    g.finish();
}

fn bench_charrnn(c: &mut Criterion) {
    let model = CharRnn::init(CharRnnConfig::default(), 1).unwrap();
    let contexts = contexts(32);
    let refs: Vec<&str> = contexts.iter().map(String::as_str).collect();
    c.bench_function("charrnn next distributions x32", |b| {
        b.iter(|| model.next_distributions(black_box(&refs)).unwrap())
    });
    let (seqs, targets) = sequences(32, CharRnnConfig::default().context_len);
    let mut train = model.clone();
    let mut adam = Adam::new();
    let mut g = c.benchmark_group("slow");
    g.sample_size(10);
    g.bench_function("charrnn train step 32x20", |b| {
        b.iter(|| train.train_step(&mut adam, &seqs, &targets, 1e-3, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_conv, bench_filter, bench_eegnet, bench_charrnn);
criterion_main!(benches);
