//! Seeded Gaussian class clouds for tests and demos.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;

/// `k` isotropic unit-variance clouds of `per_class` points in `dim`
/// dimensions, centers spaced evenly on a circle of radius `spread` in the
/// first two coordinates. Rows are grouped by class.
pub fn gaussian_blobs(k: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Dataset {
    assert!(dim >= 2 && k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = k * per_class;
    let mut x = DMatrix::zeros(l, dim);
    let mut labels = Vec::with_capacity(l);
    for c in 0..k {
        let angle = std::f64::consts::TAU * c as f64 / k as f64;
        for r in 0..per_class {
            let row = c * per_class + r;
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let center = match d {
                    0 => spread * angle.cos(),
                    1 => spread * angle.sin(),
                    _ => 0.0,
                };
                x[(row, d)] = center + z;
            }
            labels.push(c + 1);
        }
    }
    let names = (1..=k).map(|c| format!("c{c}")).collect();
    Dataset::new(format!("gauss{seed}"), x, labels, names).expect("labels in range")
}
