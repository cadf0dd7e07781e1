use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use opfbound::chordal::chordal_extend;
use opfbound::relaxations::{solve_dual_sdp, solve_socp};
use opfbound::{run_with_local, solve_local, FastboundOptions};
use opfbound_bench::fixture;

fn decomposition(c: &mut Criterion) {
    let mut g = c.benchmark_group("chordal_extend");
    for name in ["case30", "case118"] {
        let f = fixture(name);
        let edges = f.case.edges();
        g.bench_function(name, |b| b.iter(|| chordal_extend(black_box(f.case.n_bus()), black_box(&edges))));
    }
    g.finish();
}

fn local(c: &mut Criterion) {
    let mut g = c.benchmark_group("local");
    g.sample_size(10);
    for name in ["case30", "case118"] {
        let f = fixture(name);
        g.bench_function(name, |b| b.iter(|| solve_local(&f.case, &f.mats, &Default::default()).unwrap()));
    }
    g.finish();
}

/// Full SDP and SOCP against the partial solve at a few sigma values.
fn bounds(c: &mut Criterion) {
    let mut g = c.benchmark_group("bound");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for name in ["case30", "case118"] {
        let f = fixture(name);
        let local = solve_local(&f.case, &f.mats, &Default::default()).unwrap();
        g.bench_function(BenchmarkId::new("sdp", name), |b| {
            b.iter(|| solve_dual_sdp(&f.case, &f.mats, &f.dec, &Default::default()).unwrap())
        });
        g.bench_function(BenchmarkId::new("socp", name), |b| {
            b.iter(|| solve_socp(&f.case, &f.mats, &Default::default()).unwrap())
        });
        for sigma in [0.2, 0.6] {
            let opts = FastboundOptions { sigma, ..Default::default() };
            let id = BenchmarkId::new(format!("fastbound_{:.0}", sigma * 100.0), name);
            g.bench_function(id, |b| b.iter(|| run_with_local(&f.case, &f.mats, &f.dec, &local, &opts).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, decomposition, local, bounds);
criterion_main!(benches);
