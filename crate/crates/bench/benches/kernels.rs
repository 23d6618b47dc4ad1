use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sabr_core::gan::{critic_objective, Critic, GanConfig};
use sabr_core::penalty::grad_penalty_value_and_grad;
use sabr_core::{Matrix, SeededRng, Tape};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = SeededRng::new(0);
    for n in [32, 128, 256] {
        let a = rng.normal_matrix(n, n, 1.0);
        let b = rng.normal_matrix(n, n, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    group.finish();
}

/// Forward and backward through a two-layer MLP with a cross-entropy head.
fn backward(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let x = rng.normal_matrix(64, 32, 1.0);
    let w1 = rng.normal_matrix(32, 128, 0.1);
    let w2 = rng.normal_matrix(128, 10, 0.1);
    let targets: Vec<usize> = (0..64).map(|i| i % 10).collect();
    c.bench_function("mlp_backward_64x32x128x10", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let w1v = tape.var(w1.clone());
            let w2v = tape.var(w2.clone());
            let h = tape.matmul(xv, w1v).unwrap();
            let h = tape.relu(h);
            let logits = tape.matmul(h, w2v).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &targets).unwrap();
            black_box(tape.backward(loss).unwrap())
        })
    });
}

/// Double backprop through the critic: the costliest step of GAN training.
fn gradient_penalty(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let cfg = GanConfig::desk();
    let (dim, cond_dim, n) = (32, 8, 64);
    let critic = Critic::new(dim, Some(cond_dim), &cfg, &mut rng).unwrap();
    let real = rng.normal_matrix(n, dim, 1.0);
    let fake = rng.normal_matrix(n, dim, 1.0);
    let cond = rng.normal_matrix(n, cond_dim, 1.0);
    let alpha: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    c.bench_function("gradient_penalty_param_grad", |bench| {
        bench.iter(|| {
            black_box(
                grad_penalty_value_and_grad(&critic.net, black_box(&real), Some(&cond)).unwrap(),
            )
        })
    });
    c.bench_function("critic_objective_with_penalty", |bench| {
        bench.iter(|| {
            black_box(critic_objective(&critic, &real, &fake, Some(&cond), 10.0, &alpha).unwrap())
        })
    });
}

fn small_matrices(c: &mut Criterion) {
    let m = Matrix::filled(64, 128, 0.5);
    c.bench_function("transpose_64x128", |bench| {
        bench.iter(|| black_box(&m).transpose())
    });
}

criterion_group!(benches, matmul, backward, gradient_penalty, small_matrices);
criterion_main!(benches);
