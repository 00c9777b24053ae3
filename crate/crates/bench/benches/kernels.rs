use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dsc_bench::{fixture, schedule};
use dsc_core::coherence::{generalized_mutual_coherence, mutual_coherence, CoherenceMode};
use dsc_core::lista::lista_cp_run;
use dsc_core::network::compile;
use dsc_core::pursuit::{basis_pursuit, brute_force_l0};

fn coherence(c: &mut Criterion) {
    let mut g = c.benchmark_group("coherence");
    for (m, n) in [(8, 12), (16, 32)] {
        let f = fixture(m, n, 1, 1);
        g.bench_with_input(BenchmarkId::new("mu", format!("{m}x{n}")), &f, |b, f| {
            b.iter(|| mutual_coherence(black_box(&f.dict)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("mu_tilde_lp", format!("{m}x{n}")), &f, |b, f| {
            b.iter(|| generalized_mutual_coherence(black_box(&f.dict), CoherenceMode::Exact).unwrap())
        });
    }
    g.finish();
}

fn lista(c: &mut Criterion) {
    let f = fixture(16, 32, 2, 2);
    let mut g = c.benchmark_group("lista");
    for k in [10, 30] {
        let sched = schedule(&f, 2, k);
        g.bench_with_input(BenchmarkId::new("iterate", k), &sched, |b, s| {
            b.iter(|| lista_cp_run(s, &f.dict, black_box(&f.y)).unwrap())
        });
        let net = compile(&sched, &f.dict, &sched.class).unwrap();
        g.bench_with_input(BenchmarkId::new("network_forward", k), &net, |b, net| {
            b.iter(|| net.forward(black_box(&f.y)).unwrap())
        });
    }
    g.finish();
}

fn pursuit(c: &mut Criterion) {
    let f = fixture(8, 12, 2, 3);
    let mut g = c.benchmark_group("pursuit");
    g.bench_function("basis_pursuit_8x12", |b| b.iter(|| basis_pursuit(&f.dict, black_box(&f.y)).unwrap()));
    g.bench_function("brute_force_l0_8x12_s2", |b| {
        b.iter(|| brute_force_l0(&f.dict, black_box(&f.y), 2, 0.0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, coherence, lista, pursuit);
criterion_main!(benches);
