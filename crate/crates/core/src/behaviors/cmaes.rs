//! (mu/mu_w, lambda)-CMA-ES with the standard default parameters.
//!
//! Samples of a generation are handed out one per ask; once all lambda
//! values have been told, mean, evolution paths, covariance and step size
//! are updated. Points are clamped to the unit cube before evaluation and the
//! update uses the clamped points.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use super::UnitOptimizer;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaEsConfig {
    /// Initial step size as a fraction of the box width.
    pub sigma0: f64,
    /// Overrides `4 + floor(3 ln d)`.
    pub lambda: Option<usize>,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        CmaEsConfig {
            sigma0: 0.3,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmaEs {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,

    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenbasis `B` and axis lengths `D` of `cov`.
    basis: DMatrix<f64>,
    axes: DVector<f64>,
    pc: DVector<f64>,
    ps: DVector<f64>,
    generation: usize,

    queue: Vec<Vec<f64>>,
    told: Vec<(Vec<f64>, f64)>,
}

impl CmaEs {
    pub fn new(dim: usize, cfg: CmaEsConfig) -> Self {
        Self::with_state(vec![0.5; dim], cfg.sigma0, cfg.lambda)
    }

    /// Starts from an explicit mean and step size with identity covariance.
    pub fn with_state(mean: Vec<f64>, sigma: f64, lambda: Option<usize>) -> Self {
        let n = mean.len();
        let nf = n as f64;
        let lambda = lambda.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize).max(2);
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        CmaEs {
            dim: n,
            lambda,
            mu,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            axes: DVector::from_element(n, 1.0),
            pc: DVector::zeros(n),
            ps: DVector::zeros(n),
            generation: 0,
            queue: Vec::new(),
            told: Vec::new(),
        }
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// One draw `m + sigma * B D z` from the current search distribution (unclamped).
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
        let y = &self.basis * z.component_mul(&self.axes);
        (&self.mean + y * self.sigma).iter().copied().collect()
    }

    fn update(&mut self) {
        let n = self.dim as f64;
        let mut told = std::mem::take(&mut self.told);
        told.sort_by(|a, b| b.1.total_cmp(&a.1));
        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = told[..self.mu]
            .iter()
            .map(|(x, _)| (DVector::from_column_slice(x) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_axes = self.axes.map(|d| 1.0 / d);
        let c_inv_sqrt_yw = &self.basis * (self.basis.transpose() * &y_w).component_mul(&inv_axes);
        self.ps = &self.ps * (1.0 - self.cs)
            + c_inv_sqrt_yw * (self.cs * (2.0 - self.cs) * self.mueff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - self.cs).powf(2.0 * gen)).sqrt() / self.chi_n
            < 1.4 + 2.0 / (n + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        self.pc = &self.pc * (1.0 - self.cc)
            + &y_w * (hsig_f * (self.cc * (2.0 - self.cc) * self.mueff).sqrt());

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += (y * y.transpose()) * *w;
        }
        let correction = (1.0 - hsig_f) * self.cc * (2.0 - self.cc);
        self.cov = &self.cov * (1.0 - self.c1 - self.cmu + self.c1 * correction)
            + (&self.pc * self.pc.transpose()) * self.c1
            + rank_mu * self.cmu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0)).exp();
        self.sigma = self.sigma.clamp(1e-12, 1e3);

        let eig = SymmetricEigen::new(self.cov.clone());
        self.basis = eig.eigenvectors;
        self.axes = eig.eigenvalues.map(|v| v.max(1e-20).sqrt());
        self.generation += 1;
    }
}

impl UnitOptimizer for CmaEs {
    fn propose(&mut self, rng: &mut Rng) -> Vec<f64> {
        if self.queue.is_empty() {
            // Reverse so that pop() hands samples out in draw order.
            self.queue = (0..self.lambda).map(|_| self.sample(rng)).rev().collect();
        }
        let mut x = self.queue.pop().unwrap();
        for v in &mut x {
            *v = v.clamp(0.0, 1.0);
        }
        x
    }

    fn observe(&mut self, x: &[f64], y: f64) {
        self.told.push((x.to_vec(), y));
        if self.told.len() == self.lambda {
            self.update();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn default_population_size() {
        assert_eq!(CmaEs::new(2, CmaEsConfig::default()).lambda(), 6);
        assert_eq!(CmaEs::new(10, CmaEsConfig::default()).lambda(), 10);
    }

    #[test]
    fn sample_mean_matches_distribution_mean() {
        let sigma = 0.1;
        let m = vec![0.3, 0.7, 0.5];
        let es = CmaEs::with_state(m.clone(), sigma, None);
        let mut rng = rng_from(&[11]);
        let n = 5000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            for (s, v) in sum.iter_mut().zip(es.sample(&mut rng)) {
                *s += v;
            }
        }
        let tol = 3.0 * sigma / (n as f64).sqrt();
        for (s, mi) in sum.iter().zip(&m) {
            assert!((s / n as f64 - mi).abs() < tol);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let target = [0.2, 0.8];
        let mut es = CmaEs::new(2, CmaEsConfig::default());
        let mut rng = rng_from(&[5]);
        for _ in 0..300 {
            let x = es.propose(&mut rng);
            let y = -x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            es.observe(&x, y);
        }
        let err: f64 = es.mean().iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
        assert!(err < 1e-3, "mean {:?}", es.mean());
        assert!(es.generation() == 50);
    }
}
