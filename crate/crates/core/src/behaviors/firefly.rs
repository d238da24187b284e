//! Firefly algorithm (eagle strategy without the Levy walk).
//!
//! Steady-state variant: fireflies are moved one per ask in round-robin
//! order. A move attracts towards brighter fireflies and repels from darker
//! ones with weight `beta0 * exp(-gamma * r^2)`, averaged over the swarm,
//! plus a uniform perturbation whose amplitude decays linearly with the
//! generation count. The moved firefly keeps its new position only if it is
//! at least as bright as before.

use rand::Rng as _;

use super::{uniform_point, UnitOptimizer};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FireflyConfig {
    pub population: usize,
    pub beta0: f64,
    /// Light absorption in unit-cube coordinates.
    pub gamma: f64,
    pub alpha: f64,
    /// Generations over which `alpha` decays linearly to `alpha_floor`.
    pub alpha_decay_generations: usize,
    pub alpha_floor: f64,
}

impl Default for FireflyConfig {
    fn default() -> Self {
        FireflyConfig {
            population: 20,
            beta0: 1.0,
            gamma: 1.0,
            alpha: 0.1,
            alpha_decay_generations: 20,
            alpha_floor: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Firefly {
    dim: usize,
    cfg: FireflyConfig,
    positions: Vec<Vec<f64>>,
    brightness: Vec<f64>,
    cursor: usize,
    generation: usize,
}

impl Firefly {
    pub fn new(dim: usize, cfg: FireflyConfig) -> Self {
        Firefly {
            dim,
            cfg: FireflyConfig {
                population: cfg.population.max(2),
                ..cfg
            },
            positions: Vec::new(),
            brightness: Vec::new(),
            cursor: 0,
            generation: 0,
        }
    }

    /// Builds a swarm from explicit positions and brightness values.
    pub fn with_swarm(cfg: FireflyConfig, positions: Vec<Vec<f64>>, brightness: Vec<f64>) -> Self {
        let dim = positions[0].len();
        Firefly {
            dim,
            cfg: FireflyConfig {
                population: positions.len(),
                ..cfg
            },
            positions,
            brightness,
            cursor: 0,
            generation: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        let t = self.generation as f64 / self.cfg.alpha_decay_generations.max(1) as f64;
        (self.cfg.alpha * (1.0 - t)).max(self.cfg.alpha_floor)
    }

    /// New position for firefly `i` given an already drawn perturbation vector.
    pub fn candidate(&self, i: usize, perturbation: &[f64]) -> Vec<f64> {
        let xi = &self.positions[i];
        let n = self.positions.len();
        let mut step = vec![0.0; self.dim];
        for j in (0..n).filter(|&j| j != i) {
            let xj = &self.positions[j];
            let sign = if self.brightness[j] > self.brightness[i] {
                1.0
            } else if self.brightness[j] < self.brightness[i] {
                -1.0
            } else {
                0.0
            };
            if sign == 0.0 {
                continue;
            }
            let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = sign * self.cfg.beta0 * (-self.cfg.gamma * r2).exp() / (n - 1) as f64;
            for (s, (a, b)) in step.iter_mut().zip(xi.iter().zip(xj)) {
                *s += w * (b - a);
            }
        }
        xi.iter()
            .zip(step.iter().zip(perturbation))
            .map(|(x, (s, p))| (x + s + p).clamp(0.0, 1.0))
            .collect()
    }
}

impl UnitOptimizer for Firefly {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        if self.positions.len() < self.cfg.population {
            return uniform_point(self.dim, rng);
        }
        let alpha = self.alpha();
        let noise: Vec<f64> = (0..self.dim)
            .map(|_| alpha * (rng.random::<f64>() - 0.5))
            .collect();
        self.candidate(self.cursor, &noise)
    }

    fn observe(&mut self, x: &[f64], y: f64) {
        if self.positions.len() < self.cfg.population {
            self.positions.push(x.to_vec());
            self.brightness.push(y);
            return;
        }
        let i = self.cursor;
        if y >= self.brightness[i] {
            self.positions[i] = x.to_vec();
            self.brightness[i] = y;
        }
        self.cursor += 1;
        if self.cursor == self.positions.len() {
            self.cursor = 0;
            self.generation += 1;
        }
    }
}
