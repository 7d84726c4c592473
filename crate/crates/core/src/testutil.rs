//! Helpers shared by unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{standardize, DesignMatrix, ResponseKind, ResponseMatrix};

pub(crate) struct TestRng(ChaCha8Rng);

impl TestRng {
    pub(crate) fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub(crate) fn below(&mut self, bound: usize) -> usize {
        self.0.random_range(0..bound)
    }
}

/// Standardized Gaussian problem with a sparse random truth and unit noise.
pub(crate) fn random_problem(
    rng: &mut TestRng,
    n: usize,
    p: usize,
    r: usize,
) -> (DesignMatrix, ResponseMatrix) {
    let x = Array2::from_shape_fn((n, p), |_| rng.normal());
    let b = Array2::from_shape_fn((p, r), |_| {
        if rng.uniform() < 0.5 {
            rng.normal()
        } else {
            0.0
        }
    });
    let noise = Array2::from_shape_fn((n, r), |_| rng.normal());
    let y = x.dot(&b) + noise;
    let (xs, ys, _) = standardize(x.view(), y.view(), ResponseKind::Gaussian).unwrap();
    (xs, ys)
}
