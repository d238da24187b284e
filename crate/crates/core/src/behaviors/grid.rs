use std::collections::{HashMap, HashSet};

use rand::Rng as _;

use super::UnitOptimizer;
use crate::seed::Rng;

const POINTS_PER_AXIS: u64 = 100;
/// 100^19 is the largest grid whose cell count fits in a u128.
const MAX_EXACT_DIM: usize = 19;
const MAX_RETRIES: usize = 100;

/// Random walk over a grid of 100 equidistant values per coordinate, without replacement.
///
/// Up to 19 dimensions the grid is enumerated lazily by a sparse
/// Fisher-Yates shuffle over the cell indices. Beyond that, coordinates are
/// drawn independently and exact repeats are rejected (bounded retries).
#[derive(Debug, Clone)]
pub struct ShuffledGrid {
    dim: usize,
    drawn: u128,
    swaps: HashMap<u128, u128>,
    seen: HashSet<Vec<u8>>,
}

impl ShuffledGrid {
    pub fn new(dim: usize) -> Self {
        ShuffledGrid {
            dim,
            drawn: 0,
            swaps: HashMap::new(),
            seen: HashSet::new(),
        }
    }

    fn cells(&self) -> Option<u128> {
        (self.dim <= MAX_EXACT_DIM).then(|| u128::from(POINTS_PER_AXIS).pow(self.dim as u32))
    }

    fn decode(&self, mut cell: u128) -> Vec<u8> {
        (0..self.dim)
            .map(|_| {
                let k = (cell % u128::from(POINTS_PER_AXIS)) as u8;
                cell /= u128::from(POINTS_PER_AXIS);
                k
            })
            .collect()
    }

    fn next_exact(&mut self, total: u128, rng: &mut Rng) -> Vec<u8> {
        if self.drawn == total {
            // Grid exhausted: start a fresh permutation.
            self.drawn = 0;
            self.swaps.clear();
        }
        let i = self.drawn;
        let j = rng.random_range(i..total);
        let at_j = *self.swaps.get(&j).unwrap_or(&j);
        let at_i = *self.swaps.get(&i).unwrap_or(&i);
        self.swaps.insert(j, at_i);
        self.swaps.remove(&i);
        self.drawn += 1;
        self.decode(at_j)
    }

    fn next_rejection(&mut self, rng: &mut Rng) -> Vec<u8> {
        let mut cand = Vec::new();
        for _ in 0..MAX_RETRIES {
            cand = (0..self.dim)
                .map(|_| rng.random_range(0..POINTS_PER_AXIS) as u8)
                .collect();
            if !self.seen.contains(&cand) {
                break;
            }
        }
        self.seen.insert(cand.clone());
        cand
    }
}

impl UnitOptimizer for ShuffledGrid {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        let ks = match self.cells() {
            Some(total) => self.next_exact(total, rng),
            None => self.next_rejection(rng),
        };
        ks.iter()
            .map(|&k| f64::from(k) / (POINTS_PER_AXIS - 1) as f64)
            .collect()
    }

    fn observe(&mut self, _x: &[f64], _y: f64) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::{AlgoId, BehaviorState};
    use crate::problems::SearchSpace;
    use crate::seed::rng_from;

    #[test]
    fn one_dimensional_grid_is_a_permutation() {
        let mut s = BehaviorState::new(AlgoId::ShuffledGrid, SearchSpace::unit(1).unwrap(), 9);
        let mut seen = HashSet::new();
        for _ in 0..100 {
            let x = s.ask().unwrap();
            let k = (x[0] * 99.0).round();
            assert!((0.0..=99.0).contains(&k));
            assert_eq!(x[0], k / 99.0);
            assert!(seen.insert(k as i64));
            s.tell(&x, 0.0).unwrap();
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn two_dimensional_draws_are_distinct() {
        let mut g = ShuffledGrid::new(2);
        let mut rng = rng_from(&[1]);
        let pts: HashSet<Vec<u64>> = (0..3000)
            .map(|_| g.propose(&mut rng).iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(pts.len(), 3000);
    }

    #[test]
    fn high_dimensional_falls_back_to_rejection() {
        let mut g = ShuffledGrid::new(60);
        let mut rng = rng_from(&[2]);
        for _ in 0..50 {
            let x = g.propose(&mut rng);
            assert_eq!(x.len(), 60);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(g.seen.len(), 50);
    }
}
