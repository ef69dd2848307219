use countcon::constraint::project_c;
use countcon::optim::{project_m, AdamState, PmConfig};
use countcon::{AdamConfig, CountConstraint, LossKind, Model, PcConfig};
use countcon_bench::canonical;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn forward_and_grad(c: &mut Criterion) {
    let (net, data) = canonical();
    let upstream = vec![1.0 / data.n() as f64; data.n()];
    c.bench_function("forward_133x621", |b| b.iter(|| net.forward(black_box(data.inputs())).unwrap()));
    c.bench_function("grad_133x621", |b| {
        b.iter(|| net.grad(black_box(data.inputs()), &upstream).unwrap())
    });
}

fn adam(c: &mut Criterion) {
    let mut state = AdamState::new(AdamConfig::default(), 621);
    let mut params = vec![0.5; 621];
    let grad = vec![0.1; 621];
    c.bench_function("adam_step_621", |b| b.iter(|| state.step(&mut params, black_box(&grad)).unwrap()));
}

fn projections(c: &mut Criterion) {
    let (net, data) = canonical();
    let constraint = CountConstraint::new(33, 1);
    c.bench_function("project_c_p25", |b| {
        b.iter(|| project_c(&net, &data, &constraint, &PcConfig::default()).unwrap())
    });
    let pm = PmConfig {
        max_epochs: 200,
        ..PmConfig::default()
    };
    c.bench_function("project_m_200_epochs", |b| {
        b.iter(|| project_m(&net, &data, LossKind::Mse, &pm).unwrap())
    });
}

criterion_group!(benches, forward_and_grad, adam, projections);
criterion_main!(benches);
