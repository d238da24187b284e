use super::{mutate_one, uniform_point, UnitOptimizer};
use crate::seed::Rng;

/// Mutates the incumbent in one coordinate and keeps the child only if it is strictly better.
#[derive(Debug, Clone)]
pub struct HillClimbing {
    dim: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl HillClimbing {
    pub fn new(dim: usize) -> Self {
        HillClimbing { dim, best: None }
    }

    pub fn incumbent(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, y)| (x.as_slice(), *y))
    }
}

impl UnitOptimizer for HillClimbing {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        match &self.best {
            Some((x, _)) => mutate_one(x, rng),
            None => uniform_point(self.dim, rng),
        }
    }

    fn observe(&mut self, x: &[f64], y: f64) {
        if self.best.as_ref().is_none_or(|(_, b)| y > *b) {
            self.best = Some((x.to_vec(), y));
        }
    }
}
