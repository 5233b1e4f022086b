use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use swarmkit::control::{displacement_field, scan_links, FieldScan, GainView, SensingNoise};
use swarmkit::metrics::{compactness_from_degrees, regularity_from_angles};
use swarmkit::rng::rng_from_seed;
use swarmkit::{Gains, InteractionFn, SwarmParams};
use swarmkit_bench::random_swarm;

fn field(c: &mut Criterion) {
    let mut g = c.benchmark_group("displacement_field");
    let lj = InteractionFn::lennard_jones(0.15, 0.15, 5);
    for n in [100, 400] {
        let state = random_swarm(n, 1);
        let params = SwarmParams { n, lattice_degree: 6, ..SwarmParams::default() };
        let mut scan = FieldScan::default();
        let mut rng = rng_from_seed(2);
        g.bench_with_input(BenchmarkId::new("noise_free", n), &n, |b, _| {
            b.iter(|| {
                displacement_field(&state, &params, GainView::Uniform(Gains::TRIANGULAR), &lj, SensingNoise::default(), &mut rng, &mut scan)
                    .unwrap();
                black_box(&scan.controls);
            })
        });
        let noisy = SensingNoise { sigma_m: 0.1, compass: 0.05 };
        g.bench_with_input(BenchmarkId::new("noisy", n), &n, |b, _| {
            b.iter(|| {
                displacement_field(&state, &params, GainView::Uniform(Gains::TRIANGULAR), &lj, noisy, &mut rng, &mut scan).unwrap();
                black_box(&scan.controls);
            })
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for n in [100, 400] {
        let state = random_swarm(n, 3);
        let params = SwarmParams { n, lattice_degree: 4, ..SwarmParams::default() };
        let mut scan = FieldScan::default();
        scan_links(&state, &params, &mut scan);
        g.bench_with_input(BenchmarkId::new("regularity", scan.link_angles.len()), &n, |b, _| {
            b.iter(|| black_box(regularity_from_angles(&scan.link_angles, 4)))
        });
        g.bench_with_input(BenchmarkId::new("compactness", n), &n, |b, _| {
            b.iter(|| black_box(compactness_from_degrees(&scan.degrees, 4)))
        });
    }
    g.finish();
}

criterion_group!(benches, field, metrics);
criterion_main!(benches);
