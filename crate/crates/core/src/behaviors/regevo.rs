use rand::seq::index::sample;

use super::{mutate_one, uniform_point, UnitOptimizer};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub x: Vec<f64>,
    pub y: f64,
    /// Insertion counter; the smallest value is the oldest member.
    pub born: u64,
}

/// Tournament selection with age-based (oldest-first) replacement.
#[derive(Debug, Clone)]
pub struct RegularizedEvolution {
    dim: usize,
    capacity: usize,
    tournament: usize,
    population: Vec<Member>,
    births: u64,
}

impl RegularizedEvolution {
    pub fn new(dim: usize, capacity: usize, tournament: usize) -> Self {
        RegularizedEvolution {
            dim,
            capacity: capacity.max(1),
            tournament: tournament.clamp(1, capacity.max(1)),
            population: Vec::with_capacity(capacity + 1),
            births: 0,
        }
    }

    pub fn population(&self) -> &[Member] {
        &self.population
    }
}

impl UnitOptimizer for RegularizedEvolution {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        if self.population.len() < self.capacity {
            return uniform_point(self.dim, rng);
        }
        let parent = sample(rng, self.population.len(), self.tournament)
            .into_iter()
            .map(|i| &self.population[i])
            .fold(None::<&Member>, |best, m| match best {
                Some(b) if b.y >= m.y => Some(b),
                _ => Some(m),
            })
            .unwrap();
        mutate_one(&parent.x, rng)
    }

    fn observe(&mut self, x: &[f64], y: f64) {
        self.population.push(Member {
            x: x.to_vec(),
            y,
            born: self.births,
        });
        self.births += 1;
        if self.population.len() > self.capacity {
            let oldest = self
                .population
                .iter()
                .enumerate()
                .min_by_key(|(_, m)| m.born)
                .map(|(i, _)| i)
                .unwrap();
            self.population.remove(oldest);
        }
    }
}
