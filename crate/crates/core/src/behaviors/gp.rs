//! Gaussian-process regression with a Matérn-5/2 kernel and expected-improvement search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;

use super::{uniform_point, UnitOptimizer};
use crate::error::{Error, Result};
use crate::seed::Rng;

const MAX_JITTER: f64 = 1e-2;

/// Zero-mean GP prior with an isotropic Matérn-5/2 kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    pub inputs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpModel {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        matern52(a, b, self.lengthscale, self.signal_var)
    }

    /// Factorizes `K + noise I`, escalating a diagonal jitter on failure.
    pub fn fit(&self) -> Result<FittedGp> {
        let n = self.inputs.len();
        if n == 0 {
            return Err(Error::MissingData("GP has no observations".into()));
        }
        let k = DMatrix::from_fn(n, n, |i, j| self.kernel(&self.inputs[i], &self.inputs[j]));
        let mut jitter = 0.0;
        loop {
            let mut kn = k.clone();
            for i in 0..n {
                kn[(i, i)] += self.noise_var + jitter;
            }
            if let Some(chol) = Cholesky::new(kn) {
                let y = DVector::from_column_slice(&self.values);
                let alpha = chol.solve(&y);
                return Ok(FittedGp {
                    model: self.clone(),
                    chol,
                    alpha,
                });
            }
            jitter = if jitter == 0.0 {
                1e-10 * self.signal_var
            } else {
                jitter * 10.0
            };
            if jitter > MAX_JITTER * self.signal_var {
                return Err(Error::Numerical(
                    "kernel matrix not positive definite after maximum jitter".into(),
                ));
            }
        }
    }
}

pub fn matern52(a: &[f64], b: &[f64], lengthscale: f64, signal_var: f64) -> f64 {
    let r = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let s = 5f64.sqrt() * r / lengthscale;
    signal_var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[derive(Debug, Clone)]
pub struct FittedGp {
    model: GpModel,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl FittedGp {
    pub fn model(&self) -> &GpModel {
        &self.model
    }

    /// Posterior mean and variance at `x`; the variance is floored at zero.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let kx = DVector::from_iterator(
            self.model.inputs.len(),
            self.model.inputs.iter().map(|xi| self.model.kernel(xi, x)),
        );
        let mean = kx.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&kx).unwrap_or(kx);
        let var = self.model.signal_var - v.dot(&v);
        (mean, var.max(0.0))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.alpha.len() as f64;
        let y = DVector::from_column_slice(&self.model.values);
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Posterior `(mean, variance)` of `model` at `x`.
pub fn gp_posterior(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    Ok(model.fit()?.posterior(x))
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `best_y` for maximization.
pub fn expected_improvement(mean: f64, std: f64, best_y: f64) -> f64 {
    if std <= 0.0 {
        return (mean - best_y).max(0.0);
    }
    let z = (mean - best_y) / std;
    (std * (z * norm_cdf(z) + norm_pdf(z))).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpEiConfig {
    pub noise_var: f64,
    pub lengthscale_grid: Vec<f64>,
    /// Number of tells between lengthscale re-selections.
    pub refit_every: usize,
    pub candidates: usize,
    pub refine_top: usize,
    pub refine_steps: Vec<f64>,
}

impl Default for GpEiConfig {
    fn default() -> Self {
        GpEiConfig {
            noise_var: 1e-6,
            lengthscale_grid: vec![0.03, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5],
            refit_every: 10,
            candidates: 512,
            refine_top: 8,
            refine_steps: vec![0.1, 0.03, 0.01, 0.003],
        }
    }
}

/// Result of maximizing EI over a random candidate pool plus local refinement.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub point: Vec<f64>,
    pub ei: f64,
    /// EI of every candidate in the initial pool.
    pub pool_ei: Vec<f64>,
}

pub fn maximize_ei(gp: &FittedGp, best_y: f64, cfg: &GpEiConfig, rng: &mut Rng) -> Acquisition {
    let dim = gp.model.inputs[0].len();
    let ei_at = |x: &[f64]| {
        let (m, v) = gp.posterior(x);
        expected_improvement(m, v.sqrt(), best_y)
    };
    let pool: Vec<Vec<f64>> = (0..cfg.candidates.max(1))
        .map(|_| uniform_point(dim, rng))
        .collect();
    let pool_ei: Vec<f64> = pool.iter().map(|x| ei_at(x)).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool_ei[b].total_cmp(&pool_ei[a]));

    let mut best = (pool[order[0]].clone(), pool_ei[order[0]]);
    for &start in order.iter().take(cfg.refine_top) {
        let (mut x, mut ei) = (pool[start].clone(), pool_ei[start]);
        for &step in &cfg.refine_steps {
            for i in 0..dim {
                for dir in [-1.0, 1.0] {
                    let mut c = x.clone();
                    c[i] = (c[i] + dir * step).clamp(0.0, 1.0);
                    let e = ei_at(&c);
                    if e > ei {
                        x = c;
                        ei = e;
                    }
                }
            }
        }
        if ei > best.1 {
            best = (x, ei);
        }
    }
    Acquisition {
        point: best.0,
        ei: best.1,
        pool_ei,
    }
}

/// Bayesian optimization with EI. The first `max(5, d)` points are uniform.
#[derive(Debug, Clone)]
pub struct GpEi {
    dim: usize,
    cfg: GpEiConfig,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    lengthscale: Option<f64>,
    last_fit: usize,
}

impl GpEi {
    pub fn new(dim: usize, cfg: GpEiConfig) -> Self {
        GpEi {
            dim,
            cfg,
            xs: Vec::new(),
            ys: Vec::new(),
            lengthscale: None,
            last_fit: 0,
        }
    }

    fn warmup(&self) -> usize {
        self.dim.max(5)
    }

    fn standardized(&self) -> Vec<f64> {
        let n = self.ys.len() as f64;
        let mean = self.ys.iter().sum::<f64>() / n;
        let var = self.ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        self.ys.iter().map(|y| (y - mean) / std).collect()
    }

    fn model(&self, lengthscale: f64, values: Vec<f64>) -> GpModel {
        GpModel {
            inputs: self.xs.clone(),
            values,
            lengthscale,
            signal_var: 1.0,
            noise_var: self.cfg.noise_var,
        }
    }

    fn select_lengthscale(&self, values: &[f64]) -> Option<f64> {
        self.cfg
            .lengthscale_grid
            .iter()
            .filter_map(|&l| {
                let fit = self.model(l, values.to_vec()).fit().ok()?;
                Some((l, fit.log_marginal_likelihood()))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l)
    }
}

impl UnitOptimizer for GpEi {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        if self.xs.len() < self.warmup() {
            return uniform_point(self.dim, rng);
        }
        let values = self.standardized();
        if self.lengthscale.is_none() || self.xs.len() - self.last_fit >= self.cfg.refit_every {
            if let Some(l) = self.select_lengthscale(&values) {
                self.lengthscale = Some(l);
            }
            self.last_fit = self.xs.len();
        }
        let Some(l) = self.lengthscale else {
            return uniform_point(self.dim, rng);
        };
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self.model(l, values).fit() {
            Ok(gp) => maximize_ei(&gp, best, &self.cfg, rng).point,
            Err(_) => {
                let i = rng.random_range(0..self.xs.len());
                super::mutate_one(&self.xs[i], rng)
            }
        }
    }

    fn observe(&mut self, x: &[f64], y: f64) {
        self.xs.push(x.to_vec());
        self.ys.push(y);
    }
}
