use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use swarmkit::rigidity::{lattice_framework, lattice_spectrum, rigidity_report, RANK_TOL};
use swarmkit::InteractionFn;
use swarmkit_bench::rigid_lattice;

fn rank(c: &mut Criterion) {
    let mut g = c.benchmark_group("rigidity_rank");
    g.sample_size(20);
    for (d, n) in [(2, 100), (3, 64), (3, 125)] {
        let fw = lattice_framework(d, rigid_lattice(n, d, 7), 1.0);
        g.bench_with_input(BenchmarkId::new(format!("d{d}"), n), &n, |b, _| {
            b.iter(|| black_box(rigidity_report(&fw, Some(1.0), RANK_TOL, 1e-9).unwrap()))
        });
    }
    g.finish();
}

fn spectrum(c: &mut Criterion) {
    let mut g = c.benchmark_group("jacobian_spectrum");
    g.sample_size(10);
    let f = InteractionFn::lennard_jones(0.5, 0.5, 12);
    for n in [25, 100] {
        let fw = lattice_framework(2, rigid_lattice(n, 2, 8), 1.0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(lattice_spectrum(&fw, &f, 1e-6).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, rank, spectrum);
criterion_main!(benches);
