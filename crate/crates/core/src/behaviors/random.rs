use super::{uniform_point, UnitOptimizer};
use crate::seed::Rng;

/// Uniform sampling over the whole domain.
#[derive(Debug, Clone)]
pub struct RandomSearch {
    dim: usize,
}

impl RandomSearch {
    pub fn new(dim: usize) -> Self {
        RandomSearch { dim }
    }
}

impl UnitOptimizer for RandomSearch {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        uniform_point(self.dim, rng)
    }

    fn observe(&mut self, _x: &[f64], _y: f64) {}
}
