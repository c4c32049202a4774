use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use elastlab::elasticity::srel_last_layer_closed_form;
use elastlab::mlp::{Head, Loss, Target};
use elastlab_bench::{eigen, last_layer_weights, mlp, random_vector, spd_matrix};

fn expm(c: &mut Criterion) {
    let mut group = c.benchmark_group("expm_neg");
    for n in [10, 50, 200] {
        let eig = eigen(n, 1);
        group.bench_with_input(BenchmarkId::new("cached_eigen", n), &n, |b, _| b.iter(|| eig.expm_neg(black_box(0.5))));
        let a = spd_matrix(n, 1);
        group.bench_with_input(BenchmarkId::new("with_decomposition", n), &n, |b, _| {
            b.iter(|| elastlab::linalg::sym_expm_neg(black_box(&a), 0.5).unwrap())
        });
    }
    group.finish();
}

fn closed_form_srel(c: &mut Criterion) {
    let mut group = c.benchmark_group("srel_last_layer_closed_form");
    for p in [10, 100, 1000] {
        let w = last_layer_weights(3, p, 2);
        let h = random_vector(p, 3).abs();
        let hp = random_vector(p, 4).abs();
        group.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, _| {
            b.iter(|| srel_last_layer_closed_form(black_box(&w), &h, 0, &hp, 1.0, 3000, 3).unwrap())
        });
    }
    group.finish();
}

fn mlp_grad(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp_grad");
    let regress = mlp(&[10, 32, 32, 32, 1], Head::Identity, 5);
    let x = random_vector(10, 6);
    group.bench_function("regression_10x32x32x32", |b| {
        b.iter(|| regress.grad(black_box(x.as_slice()), Target::Real(1.0), Loss::Squared).unwrap())
    });
    let classify = mlp(&[50, 64, 64, 3], Head::Softmax, 7);
    let x = random_vector(50, 8);
    group.bench_function("classification_50x64x64x3", |b| {
        b.iter(|| classify.grad(black_box(x.as_slice()), Target::Class(1), Loss::CrossEntropy).unwrap())
    });
    group.finish();
}

criterion_group!(benches, expm, closed_form_srel, mlp_grad);
criterion_main!(benches);
