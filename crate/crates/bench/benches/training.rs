use criterion::{criterion_group, criterion_main, Criterion};
use fpsr_bench::{desk_config, phantom_pairs};
use fpsr_core::networks::FpGanModel;
use fpsr_core::Trainer;
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let config = desk_config();
    let model = FpGanModel::<f32>::new(&config.model_config()).unwrap();
    let lr = phantom_pairs(1, 2, 64).remove(0).lr;
    c.bench_function("model_forward_x2_32", |b| b.iter(|| black_box(model.forward(&lr).unwrap())));
}

fn train_step(c: &mut Criterion) {
    let pairs = phantom_pairs(8, 2, 64);
    let mut trainer = Trainer::new(desk_config()).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("train_step_batch4", |b| b.iter(|| black_box(trainer.step_on(&pairs).unwrap())));
    group.finish();
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
