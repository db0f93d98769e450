//! Fixtures shared by the benchmarks.

use optflow_core::{ConvexSetSpec, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform points in `[-r, r]^m`.
pub fn points(count: usize, m: usize, r: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Point::from_fn(m, |_, _| rng.random_range(-r..r)))
        .collect()
}

/// A ball, a box and a halfspace sharing a neighborhood of the origin.
pub fn overlapping_sets(m: usize) -> Vec<ConvexSetSpec> {
    let mut center = vec![0.0; m];
    center[0] = 0.5;
    let mut normal = vec![0.0; m];
    normal[m - 1] = 1.0;
    vec![
        ConvexSetSpec::ball(&center, 1.0),
        ConvexSetSpec::cube(&vec![-0.7; m], &vec![0.8; m]),
        ConvexSetSpec::halfspace(&normal, 0.3),
    ]
}
