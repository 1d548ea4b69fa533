use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use infogap_bench::{double_well, policy, symmetric};
use infogap_core::curvature::fisher_exact;
use infogap_core::info::{cond_mutual_info, Axis, JointHistogram};
use infogap_core::sgd::run_escape_trials;
use infogap_core::tensor::sym_eigen;

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("sym_eigen");
    for n in [8, 32, 64] {
        let m = symmetric(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| sym_eigen(black_box(m)).unwrap())
        });
    }
    g.finish();
}

fn scores(c: &mut Criterion) {
    let (m, inputs, _) = policy(16, 5, 32, 2);
    c.bench_function("grad_logp_16x32x5", |b| {
        b.iter(|| m.grad_logp(black_box(&inputs[3]), 2).unwrap())
    });
}

fn fisher(c: &mut Criterion) {
    let (m, inputs, t) = policy(8, 4, 16, 3);
    c.bench_function("fisher_exact_8x16x4", |b| {
        b.iter(|| fisher_exact(black_box(&m), &inputs, &t).unwrap())
    });
}

fn cmi(c: &mut Criterion) {
    let counts: Vec<u64> = (0..8 * 8 * 5).map(|i| (i * 7919 % 97) as u64).collect();
    let h = JointHistogram::from_counts(
        vec![Axis::new("x", 8), Axis::new("z", 8), Axis::new("y", 5)],
        counts,
    )
    .unwrap();
    c.bench_function("cond_mutual_info_8x8x5", |b| {
        b.iter(|| cond_mutual_info(black_box(&h), "x", "z", "y").unwrap())
    });
}

fn escape(c: &mut Criterion) {
    let land = double_well(0.05);
    let mut g = c.benchmark_group("escape");
    g.sample_size(10);
    g.bench_function("20_trials_b4", |b| {
        b.iter(|| run_escape_trials(&land, 0.1, 4, 20, 10_000_000, 7).unwrap())
    });
    g.finish();
}

criterion_group!(benches, eigen, scores, fisher, cmi, escape);
criterion_main!(benches);
