//! Fixtures shared by the benchmarks.

use swarmkit::geometry::{sample_disk_initial, Point};
use swarmkit::rigidity::generate_rigid_lattice;
use swarmkit::rng::rng_from_seed;
use swarmkit::SwarmState;

/// `n` agents drawn uniformly from the disk of radius `√(n/25)`.
pub fn random_swarm(n: usize, seed: u64) -> SwarmState {
    let mut rng = rng_from_seed(seed);
    SwarmState::new(2, sample_disk_initial(n, 2, (n as f64 / 25.0).sqrt(), &mut rng))
}

pub fn rigid_lattice(n: usize, d: usize, seed: u64) -> Vec<Point> {
    let mut rng = rng_from_seed(seed);
    generate_rigid_lattice(n, d, 1.0, &mut rng).expect("lattice")
}
