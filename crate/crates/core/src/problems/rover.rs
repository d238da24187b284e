//! Planar rover trajectory planning.
//!
//! The 60 inputs are 30 control points in the unit square. A natural cubic
//! spline through them (uniform parameterization) is sampled at `samples`
//! points and the obstacle cost is integrated along the resulting polyline.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

pub const ROVER_DIM: usize = 60;
const CONTROL_POINTS: usize = ROVER_DIM / 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub height: f64,
    pub width: f64,
}

/// Cost per unit length at a point: `base + sum_k h_k exp(-|p - c_k|^2 / (2 w_k^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMap {
    pub base: f64,
    pub obstacles: Vec<Obstacle>,
}

impl CostMap {
    pub fn zero() -> Self {
        CostMap {
            base: 0.0,
            obstacles: Vec::new(),
        }
    }

    /// `count` obstacles with centers and sizes fixed by `seed`.
    pub fn random(count: usize, seed: u64) -> Self {
        let mut rng = rng_from(&[seed, 0x0B57]);
        let obstacles = (0..count)
            .map(|_| Obstacle {
                center: [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                height: rng.random_range(1.0..3.0),
                width: rng.random_range(0.03..0.08),
            })
            .collect();
        CostMap {
            base: 0.1,
            obstacles,
        }
    }

    pub fn rate(&self, p: [f64; 2]) -> f64 {
        self.base
            + self
                .obstacles
                .iter()
                .map(|o| {
                    let dx = p[0] - o.center[0];
                    let dy = p[1] - o.center[1];
                    o.height * (-(dx * dx + dy * dy) / (2.0 * o.width * o.width)).exp()
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverProblem {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Weight of the endpoint L1 penalty.
    pub lambda: f64,
    pub offset: f64,
    pub samples: usize,
    pub map: CostMap,
}

impl Default for RoverProblem {
    fn default() -> Self {
        RoverProblem {
            start: [0.05, 0.05],
            goal: [0.95, 0.95],
            lambda: 4.0,
            offset: 5.0,
            samples: 1000,
            map: CostMap::random(15, 2018),
        }
    }
}

impl RoverProblem {
    fn check(x: &[f64]) -> Result<()> {
        if x.len() != ROVER_DIM {
            return Err(Error::invalid(format!(
                "rover input has {} entries, expected {ROVER_DIM}",
                x.len()
            )));
        }
        Ok(())
    }

    /// Line integral of the cost map along the fitted spline.
    pub fn trajectory_cost(&self, x: &[f64]) -> Result<f64> {
        Self::check(x)?;
        let xs: Vec<f64> = x.iter().step_by(2).copied().collect();
        let ys: Vec<f64> = x.iter().skip(1).step_by(2).copied().collect();
        let sx = NaturalSpline::new(&xs);
        let sy = NaturalSpline::new(&ys);
        let m = self.samples.max(2);
        let span = (CONTROL_POINTS - 1) as f64;
        let pts: Vec<[f64; 2]> = (0..m)
            .map(|k| {
                let u = span * k as f64 / (m - 1) as f64;
                [sx.eval(u), sy.eval(u)]
            })
            .collect();
        Ok(pts
            .windows(2)
            .map(|w| {
                let mid = [(w[0][0] + w[1][0]) / 2.0, (w[0][1] + w[1][1]) / 2.0];
                let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                self.map.rate(mid) * len
            })
            .sum())
    }

    /// Endpoint distance `|x_{0,1} - s|_1 + |x_{58,59} - g|_1`.
    pub fn endpoint_distance(&self, x: &[f64]) -> Result<f64> {
        Self::check(x)?;
        let n = x.len();
        Ok((x[0] - self.start[0]).abs()
            + (x[1] - self.start[1]).abs()
            + (x[n - 2] - self.goal[0]).abs()
            + (x[n - 1] - self.goal[1]).abs())
    }

    /// Objective under maximization: `-cost - lambda * endpoint_distance + offset`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let cost = self.trajectory_cost(x)?;
        let dist = self.endpoint_distance(x)?;
        Ok(-cost - self.lambda * dist + self.offset)
    }
}

/// Rover objective with the default problem configuration.
pub fn rover_objective(x: &[f64]) -> Result<f64> {
    default_rover().evaluate(x)
}

pub(crate) fn default_rover() -> &'static RoverProblem {
    static DEFAULT: std::sync::OnceLock<RoverProblem> = std::sync::OnceLock::new();
    DEFAULT.get_or_init(RoverProblem::default)
}

/// Natural cubic spline through `values` at knots 0, 1, ..., n-1.
struct NaturalSpline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for M_{i-1} + 4 M_i + M_{i+1} = 6 (y_{i+1} - 2 y_i + y_{i-1}).
            let m = n - 2;
            let mut c = vec![0.0; m];
            let mut d = vec![0.0; m];
            for i in 0..m {
                let rhs = 6.0 * (values[i + 2] - 2.0 * values[i + 1] + values[i]);
                if i == 0 {
                    c[i] = 1.0 / 4.0;
                    d[i] = rhs / 4.0;
                } else {
                    let denom = 4.0 - c[i - 1];
                    c[i] = 1.0 / denom;
                    d[i] = (rhs - d[i - 1]) / denom;
                }
            }
            for i in (0..m).rev() {
                let next = if i + 1 < m { second[i + 2] } else { 0.0 };
                second[i + 1] = d[i] - c[i] * next;
            }
        }
        NaturalSpline {
            values: values.to_vec(),
            second,
        }
    }

    fn eval(&self, u: f64) -> f64 {
        let n = self.values.len();
        let i = (u.floor() as usize).min(n - 2);
        let t = u - i as f64;
        let a = 1.0 - t;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        a * y0 + t * y1 + ((a * a * a - a) * m0 + (t * t * t - t) * m1) / 6.0
    }
}
