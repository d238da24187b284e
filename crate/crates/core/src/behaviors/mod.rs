//! Classical behavior optimizers behind a common ask/tell interface.
//!
//! Every algorithm works on the unit cube; [`BehaviorState`] maps points to
//! and from the task's search space and enforces strict ask/tell alternation.

mod cmaes;
mod firefly;
pub mod gp;
mod grid;
mod hill;
mod random;
mod regevo;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{SearchSpace, TaskInstance};
use crate::seed::{rng_from, Rng};

pub use cmaes::{CmaEs, CmaEsConfig};
pub use firefly::{Firefly, FireflyConfig};
pub use gp::{expected_improvement, gp_posterior, GpEi, GpEiConfig, GpModel};
pub use grid::ShuffledGrid;
pub use hill::HillClimbing;
pub use random::RandomSearch;
pub use regevo::{Member, RegularizedEvolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoId {
    RandomSearch,
    ShuffledGrid,
    HillClimbing,
    RegularizedEvolution,
    Firefly,
    CmaEs,
    GpEi,
}

impl AlgoId {
    pub const ALL: [AlgoId; 7] = [
        AlgoId::RandomSearch,
        AlgoId::ShuffledGrid,
        AlgoId::HillClimbing,
        AlgoId::RegularizedEvolution,
        AlgoId::Firefly,
        AlgoId::CmaEs,
        AlgoId::GpEi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgoId::RandomSearch => "random_search",
            AlgoId::ShuffledGrid => "shuffled_grid",
            AlgoId::HillClimbing => "hill_climbing",
            AlgoId::RegularizedEvolution => "regularized_evolution",
            AlgoId::Firefly => "firefly",
            AlgoId::CmaEs => "cma_es",
            AlgoId::GpEi => "gp_ei",
        }
    }

    /// Dense index used by the algorithm-identifier model variant.
    pub fn index(self) -> usize {
        AlgoId::ALL.iter().position(|a| *a == self).unwrap()
    }
}

impl fmt::Display for AlgoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgoId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgoId::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown behavior algorithm `{s}`")))
    }
}

/// An optimizer over `[0, 1]^d` under the maximization convention.
pub trait UnitOptimizer: Send {
    /// Proposes the next point; must lie in the unit cube.
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64>;

    /// Receives the value of the most recent proposal.
    fn observe(&mut self, x: &[f64], y: f64);
}

pub(crate) fn uniform_point(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Resets one uniformly chosen coordinate to a uniform value.
pub(crate) fn mutate_one(x: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    let i = rng.random_range(0..x.len());
    out[i] = rng.random::<f64>();
    out
}

/// One behavior run: algorithm state plus the alternation guard.
pub struct BehaviorState {
    algo: AlgoId,
    space: SearchSpace,
    seed: u64,
    rng: Rng,
    pending: Option<(Vec<f64>, Vec<f64>)>,
    inner: Box<dyn UnitOptimizer>,
}

impl fmt::Debug for BehaviorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorState")
            .field("algo", &self.algo)
            .field("space", &self.space)
            .field("seed", &self.seed)
            .field("pending", &self.pending.is_some())
            .finish()
    }
}

impl BehaviorState {
    pub fn new(algo: AlgoId, space: SearchSpace, seed: u64) -> Self {
        let dim = space.dim();
        let inner: Box<dyn UnitOptimizer> = match algo {
            AlgoId::RandomSearch => Box::new(RandomSearch::new(dim)),
            AlgoId::ShuffledGrid => Box::new(ShuffledGrid::new(dim)),
            AlgoId::HillClimbing => Box::new(HillClimbing::new(dim)),
            AlgoId::RegularizedEvolution => Box::new(RegularizedEvolution::new(dim, 25, 5)),
            AlgoId::Firefly => Box::new(Firefly::new(dim, FireflyConfig::default())),
            AlgoId::CmaEs => Box::new(CmaEs::new(dim, CmaEsConfig::default())),
            AlgoId::GpEi => Box::new(GpEi::new(dim, GpEiConfig::default())),
        };
        Self::with_optimizer(algo, space, seed, inner)
    }

    pub fn with_optimizer(
        algo: AlgoId,
        space: SearchSpace,
        seed: u64,
        inner: Box<dyn UnitOptimizer>,
    ) -> Self {
        BehaviorState {
            algo,
            space,
            seed,
            rng: rng_from(&[seed, algo.index() as u64]),
            pending: None,
            inner,
        }
    }

    pub fn algo(&self) -> AlgoId {
        self.algo
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next query point in the raw search space.
    pub fn ask(&mut self) -> Result<Vec<f64>> {
        if self.pending.is_some() {
            return Err(Error::Protocol(format!(
                "{}: ask called twice without tell",
                self.algo
            )));
        }
        let mut unit = self.inner.propose(&mut self.rng);
        for v in &mut unit {
            *v = v.clamp(0.0, 1.0);
        }
        let raw: Vec<f64> = unit
            .iter()
            .zip(self.space.lower().iter().zip(self.space.upper()))
            .map(|(u, (l, h))| (l + u * (h - l)).clamp(*l, *h))
            .collect();
        self.pending = Some((raw.clone(), unit));
        Ok(raw)
    }

    /// Reports the value of the point returned by the preceding [`ask`](Self::ask).
    pub fn tell(&mut self, x: &[f64], y: f64) -> Result<()> {
        let (raw, unit) = self.pending.take().ok_or_else(|| {
            Error::Protocol(format!("{}: tell called without a pending ask", self.algo))
        })?;
        if raw.len() != x.len() || raw.iter().zip(x).any(|(a, b)| a.to_bits() != b.to_bits()) {
            self.pending = Some((raw, unit));
            return Err(Error::Protocol(format!(
                "{}: told point does not match the last ask",
                self.algo
            )));
        }
        if !y.is_finite() {
            self.pending = Some((raw, unit));
            return Err(Error::invalid("objective value is not finite"));
        }
        self.inner.observe(&unit, y);
        Ok(())
    }
}

/// Runs `algo` on `task` for `budget` evaluations. Returns raw points and values.
pub fn run_behavior(
    algo: AlgoId,
    task: &TaskInstance,
    seed: u64,
    budget: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut state = BehaviorState::new(algo, task.space.clone(), seed);
    let mut xs = Vec::with_capacity(budget);
    let mut ys = Vec::with_capacity(budget);
    for _ in 0..budget {
        let x = state.ask()?;
        let y = task.evaluate(&x)?;
        state.tell(&x, y)?;
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}
