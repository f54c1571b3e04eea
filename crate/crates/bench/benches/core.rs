use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pcpo_bench::{desk_scenario, one_epoch_config, rollout, system};
use pcpo_core::linalg::{exact_cost, solve_dare};
use pcpo_core::pcpo::run_pcpo;
use pcpo_core::rollout::CostOracle;
use pcpo_core::zo::{zo_gradient, ZoRequest};
use pcpo_core::{Purpose, RngStream};

fn oracles(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracles");
    for n in [1, 3, 6] {
        let (sys, k) = system(n, 2.min(n), 1);
        g.bench_with_input(BenchmarkId::new("exact_cost", n), &n, |b, _| {
            b.iter(|| exact_cost(black_box(&sys), black_box(&k)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("solve_dare", n), &n, |b, _| {
            b.iter(|| solve_dare(black_box(&sys)).unwrap())
        });
        let r = rollout(&sys, &k);
        let stream = RngStream::new(0, 0, 0, Purpose::Diagnostic);
        let mut i = 0u64;
        g.bench_with_input(BenchmarkId::new("rollout", n), &n, |b, _| {
            b.iter(|| {
                i += 1;
                r.sample_cost(k.gain(), &mut stream.generator_at(i)).unwrap()
            })
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let (sys, k) = system(3, 2, 2);
    let r = rollout(&sys, &k);
    let req = ZoRequest::new(&k, 100, 0.05).unwrap();
    c.bench_function("zo_gradient/n3_m2_M100", |b| {
        let mut stream = RngStream::new(0, 0, 0, Purpose::LocalPo);
        b.iter(|| zo_gradient(&r, black_box(&req), &mut stream).unwrap())
    });
}

fn epoch(c: &mut Criterion) {
    let sc = desk_scenario();
    let cfg = one_epoch_config();
    let mut g = c.benchmark_group("protocol");
    g.sample_size(10);
    g.bench_function("one_epoch/N12_H3", |b| b.iter(|| run_pcpo(black_box(&sc), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, oracles, gradient, epoch);
criterion_main!(benches);
