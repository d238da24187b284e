//! Search spaces, benchmark objectives and task distributions.
//!
//! All objectives follow the maximization convention: minimization benchmarks
//! are negated when evaluated through a [`TaskInstance`].

pub mod functions;
pub mod rover;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{hash_str, rng_from};

pub use rover::{rover_objective, CostMap, Obstacle, RoverProblem, ROVER_DIM};

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid(format!(
                "bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::invalid(format!(
                "lower[{i}] = {} is not below upper[{i}] = {}",
                lower[i], upper[i]
            )));
        }
        Ok(SearchSpace { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn unit(dim: usize) -> Result<Self> {
        Self::cube(dim, 0.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFunction {
    Sphere,
    Rastrigin,
    Rosenbrock,
    SharpRidge,
    GriewankRosenbrock,
    Lunacek,
    Branin,
    #[serde(rename = "rover")]
    Rover2D,
}

impl BaseFunction {
    pub const ALL: [BaseFunction; 8] = [
        BaseFunction::Sphere,
        BaseFunction::Rastrigin,
        BaseFunction::Rosenbrock,
        BaseFunction::SharpRidge,
        BaseFunction::GriewankRosenbrock,
        BaseFunction::Lunacek,
        BaseFunction::Branin,
        BaseFunction::Rover2D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseFunction::Sphere => "sphere",
            BaseFunction::Rastrigin => "rastrigin",
            BaseFunction::Rosenbrock => "rosenbrock",
            BaseFunction::SharpRidge => "sharp_ridge",
            BaseFunction::GriewankRosenbrock => "griewank_rosenbrock",
            BaseFunction::Lunacek => "lunacek",
            BaseFunction::Branin => "branin",
            BaseFunction::Rover2D => "rover",
        }
    }

    /// Checks whether the function is defined for `dim` inputs.
    pub fn check_dim(self, dim: usize) -> Result<()> {
        let ok = match self {
            BaseFunction::Sphere | BaseFunction::Rastrigin | BaseFunction::Lunacek => dim >= 1,
            BaseFunction::Rosenbrock
            | BaseFunction::SharpRidge
            | BaseFunction::GriewankRosenbrock => dim >= 2,
            BaseFunction::Branin => dim == 2,
            BaseFunction::Rover2D => dim == ROVER_DIM,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} is not defined in {dim} dimensions",
                self.name()
            )))
        }
    }

    /// The conventional domain of the function.
    pub fn default_space(self, dim: usize) -> Result<SearchSpace> {
        self.check_dim(dim)?;
        match self {
            BaseFunction::Branin => SearchSpace::new(vec![-5.0, 0.0], vec![10.0, 15.0]),
            BaseFunction::Rover2D => SearchSpace::unit(ROVER_DIM),
            _ => SearchSpace::cube(dim, -5.0, 5.0),
        }
    }

    /// Location of the global maximum of the negated, untransformed function.
    pub fn optimizer(self, dim: usize) -> Option<Vec<f64>> {
        match self {
            BaseFunction::Sphere | BaseFunction::Rastrigin | BaseFunction::SharpRidge => {
                Some(vec![0.0; dim])
            }
            BaseFunction::Rosenbrock | BaseFunction::GriewankRosenbrock => Some(vec![1.0; dim]),
            BaseFunction::Lunacek => Some(vec![1.25; dim]),
            BaseFunction::Branin => Some(vec![std::f64::consts::PI, 2.275]),
            BaseFunction::Rover2D => None,
        }
    }

    /// Untransformed value under the maximization convention.
    pub fn value(self, z: &[f64]) -> Result<f64> {
        self.check_dim(z.len())?;
        Ok(match self {
            BaseFunction::Sphere => -functions::sphere(z),
            BaseFunction::Rastrigin => -functions::rastrigin(z),
            BaseFunction::Rosenbrock => -functions::rosenbrock(z),
            BaseFunction::SharpRidge => -functions::sharp_ridge(z),
            BaseFunction::GriewankRosenbrock => -functions::griewank_rosenbrock(z),
            BaseFunction::Lunacek => -functions::lunacek(z),
            BaseFunction::Branin => -functions::branin(z),
            BaseFunction::Rover2D => rover::default_rover().evaluate(z)?,
        })
    }
}

impl fmt::Display for BaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaseFunction::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown base function `{s}`")))
    }
}

/// Address of a task: `(distribution name, index)`, written `name:index`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskRef {
    pub distribution: String,
    pub index: u64,
}

impl TaskRef {
    pub fn new(distribution: impl Into<String>, index: u64) -> Self {
        TaskRef {
            distribution: distribution.into(),
            index,
        }
    }
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.distribution, self.index)
    }
}

impl FromStr for TaskRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, idx) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::invalid(format!("task reference `{s}` is not NAME:INDEX")))?;
        let index = idx
            .parse()
            .map_err(|_| Error::invalid(format!("bad task index in `{s}`")))?;
        if name.is_empty() {
            return Err(Error::invalid(format!("empty distribution name in `{s}`")));
        }
        Ok(TaskRef::new(name, index))
    }
}

impl Serialize for TaskRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A concrete objective: `f(x) = scale * g(x - translation)` with `g` the
/// negated base function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task: TaskRef,
    pub base: BaseFunction,
    pub space: SearchSpace,
    pub translation: Vec<f64>,
    pub scale: f64,
    pub seed: u64,
    /// Running maximum of all values recorded for this task.
    pub optimum_proxy: Option<f64>,
}

impl TaskInstance {
    /// The untransformed base function on its default domain.
    pub fn identity(base: BaseFunction, dim: usize) -> Result<Self> {
        Ok(TaskInstance {
            task: TaskRef::new(base.name(), 0),
            base,
            space: base.default_space(dim)?,
            translation: vec![0.0; dim],
            scale: 1.0,
            seed: 0,
            optimum_proxy: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has {} coordinates, task {} expects {}",
                x.len(),
                self.task,
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point has non-finite coordinates"));
        }
        let z: Vec<f64> = x.iter().zip(&self.translation).map(|(a, t)| a - t).collect();
        Ok(self.scale * self.base.value(&z)?)
    }

    /// Folds an observed value into the optimum proxy.
    pub fn record(&mut self, y: f64) {
        self.optimum_proxy = Some(self.optimum_proxy.map_or(y, |p| p.max(y)));
    }

    /// Location of the transformed optimum, when known in closed form.
    pub fn optimizer(&self) -> Option<Vec<f64>> {
        self.base.optimizer(self.dim()).map(|z| {
            z.iter()
                .zip(&self.translation)
                .map(|(a, t)| a + t)
                .collect()
        })
    }
}

/// A family of tasks obtained by random translation and scaling of one base function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub name: String,
    pub base: BaseFunction,
    pub space: SearchSpace,
    /// One interval per dimension.
    pub translation_range: Vec<[f64; 2]>,
    pub scaling_range: [f64; 2],
    pub master_seed: u64,
}

/// Structured-text description of a [`TaskDistribution`]. Bounds and
/// translation intervals of length one are broadcast to every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    pub name: String,
    pub base: BaseFunction,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    pub translation_range: Vec<[f64; 2]>,
    pub scaling_range: [f64; 2],
    pub master_seed: u64,
}

fn broadcast<T: Clone>(v: &[T], dim: usize, what: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); dim]),
        n if n == dim => Ok(v.to_vec()),
        n => Err(Error::config(format!(
            "{what} has {n} entries, expected 1 or {dim}"
        ))),
    }
}

impl TaskDistribution {
    pub fn from_config(cfg: &DistributionConfig) -> Result<Self> {
        let default = cfg.base.default_space(cfg.dim)?;
        let lower = match &cfg.lower {
            Some(l) => broadcast(l, cfg.dim, "lower")?,
            None => default.lower().to_vec(),
        };
        let upper = match &cfg.upper {
            Some(u) => broadcast(u, cfg.dim, "upper")?,
            None => default.upper().to_vec(),
        };
        let space = SearchSpace::new(lower, upper)?;
        let translation_range = broadcast(&cfg.translation_range, cfg.dim, "translation_range")?;
        Self::new(
            &cfg.name,
            cfg.base,
            space,
            translation_range,
            cfg.scaling_range,
            cfg.master_seed,
        )
    }

    pub fn new(
        name: &str,
        base: BaseFunction,
        space: SearchSpace,
        translation_range: Vec<[f64; 2]>,
        scaling_range: [f64; 2],
        master_seed: u64,
    ) -> Result<Self> {
        base.check_dim(space.dim())?;
        if name.is_empty() || name.contains(':') {
            return Err(Error::config(format!("invalid distribution name `{name}`")));
        }
        if translation_range.len() != space.dim() {
            return Err(Error::config("translation_range length differs from dimension"));
        }
        for r in &translation_range {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::config(format!("invalid translation interval {r:?}")));
            }
        }
        let [s0, s1] = scaling_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::config(format!(
                "invalid scaling interval {scaling_range:?}"
            )));
        }
        Ok(TaskDistribution {
            name: name.to_string(),
            base,
            space,
            translation_range,
            scaling_range,
            master_seed,
        })
    }

    pub fn to_config(&self) -> DistributionConfig {
        DistributionConfig {
            name: self.name.clone(),
            base: self.base,
            dim: self.space.dim(),
            lower: Some(self.space.lower().to_vec()),
            upper: Some(self.space.upper().to_vec()),
            translation_range: self.translation_range.clone(),
            scaling_range: self.scaling_range,
            master_seed: self.master_seed,
        }
    }

    pub fn sample_task(&self, index: u64) -> TaskInstance {
        let seed = crate::seed::derive_seed(&[self.master_seed, hash_str(&self.name), index]);
        let mut rng = rng_from(&[seed]);
        let translation = self
            .translation_range
            .iter()
            .map(|&[a, b]| if a == b { a } else { rng.random_range(a..=b) })
            .collect();
        let [s0, s1] = self.scaling_range;
        let scale = if s0 == s1 { s0 } else { rng.random_range(s0..=s1) };
        TaskInstance {
            task: TaskRef::new(self.name.clone(), index),
            base: self.base,
            space: self.space.clone(),
            translation,
            scale,
            seed,
            optimum_proxy: None,
        }
    }
}

/// Best value observed over all given value sequences of a task.
pub fn optimum_proxy<'a, I>(values: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    values
        .into_iter()
        .flat_map(|ys| ys.iter().copied())
        .fold(None, |acc: Option<f64>, y| Some(acc.map_or(y, |a| a.max(y))))
        .ok_or_else(|| Error::MissingData("no recorded values for task".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    fn identity_dist(base: BaseFunction, dim: usize) -> TaskDistribution {
        TaskDistribution::new(
            "id",
            base,
            base.default_space(dim).unwrap(),
            vec![[0.0, 0.0]; dim],
            [1.0, 1.0],
            3,
        )
        .unwrap()
    }

    #[test]
    fn trivial_values() {
        let s = TaskInstance::identity(BaseFunction::Sphere, 2).unwrap();
        assert_eq!(s.evaluate(&[0.0, 0.0]).unwrap(), 0.0);
        let r = TaskInstance::identity(BaseFunction::Rastrigin, 10).unwrap();
        assert_eq!(r.evaluate(&[0.0; 10]).unwrap(), 0.0);
        let b = TaskInstance::identity(BaseFunction::Branin, 2).unwrap();
        let v = b.evaluate(&[std::f64::consts::PI, 2.275]).unwrap();
        assert!((v + 0.397887).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = TaskInstance::identity(BaseFunction::Sphere, 2).unwrap();
        assert!(matches!(s.evaluate(&[0.0; 3]), Err(Error::InvalidInput(_))));
        assert!(BaseFunction::Rosenbrock.default_space(1).is_err());
    }

    #[test]
    fn identity_distribution_matches_closed_forms() {
        let mut rng = rng_from(&[42]);
        for base in [
            BaseFunction::Sphere,
            BaseFunction::Rastrigin,
            BaseFunction::Rosenbrock,
            BaseFunction::SharpRidge,
            BaseFunction::GriewankRosenbrock,
            BaseFunction::Lunacek,
            BaseFunction::Branin,
        ] {
            let dim = if base == BaseFunction::Branin { 2 } else { 5 };
            let task = identity_dist(base, dim).sample_task(9);
            assert_eq!(task.scale, 1.0);
            for _ in 0..100 {
                let x: Vec<f64> = (0..dim)
                    .map(|i| rng.random_range(task.space.lower()[i]..task.space.upper()[i]))
                    .collect();
                let expected = -match base {
                    BaseFunction::Sphere => functions::sphere(&x),
                    BaseFunction::Rastrigin => functions::rastrigin(&x),
                    BaseFunction::Rosenbrock => functions::rosenbrock(&x),
                    BaseFunction::SharpRidge => functions::sharp_ridge(&x),
                    BaseFunction::GriewankRosenbrock => functions::griewank_rosenbrock(&x),
                    BaseFunction::Lunacek => functions::lunacek(&x),
                    BaseFunction::Branin => functions::branin(&x),
                    BaseFunction::Rover2D => unreachable!(),
                };
                let got = task.evaluate(&x).unwrap();
                assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn argmax_is_documented_minimizer() {
        let mut rng = rng_from(&[5]);
        for base in BaseFunction::ALL {
            if base == BaseFunction::Rover2D {
                continue;
            }
            let dim = if base == BaseFunction::Branin { 2 } else { 4 };
            let task = TaskInstance::identity(base, dim).unwrap();
            let xs = task.optimizer().unwrap();
            let best = task.evaluate(&xs).unwrap();
            for _ in 0..2000 {
                let x: Vec<f64> = (0..dim)
                    .map(|i| rng.random_range(task.space.lower()[i]..task.space.upper()[i]))
                    .collect();
                assert!(task.evaluate(&x).unwrap() <= best + 1e-9, "{base}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = TaskDistribution::new(
            "rast",
            BaseFunction::Rastrigin,
            SearchSpace::cube(3, -5.0, 5.0).unwrap(),
            vec![[-1.0, 1.0]; 3],
            [0.5, 2.0],
            17,
        )
        .unwrap();
        assert_eq!(d.sample_task(4), d.sample_task(4));
        assert_ne!(d.sample_task(4), d.sample_task(5));
        let t = d.sample_task(4);
        let x = [0.3, -0.2, 1.1];
        assert_eq!(
            t.evaluate(&x).unwrap().to_bits(),
            t.evaluate(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn rover_style_ranges_respected() {
        let d = TaskDistribution::new(
            "rover",
            BaseFunction::Rover2D,
            SearchSpace::unit(60).unwrap(),
            vec![[-0.1, 0.1]; 60],
            [0.9, 1.1],
            1,
        )
        .unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..1000 {
            let t = d.sample_task(i);
            lo = lo.min(t.scale);
            hi = hi.max(t.scale);
            assert!(t.translation.iter().all(|v| (-0.1..=0.1).contains(v)));
        }
        assert!(lo >= 0.9 && hi <= 1.1);
        assert!(hi - lo > 0.15);
    }

    #[test]
    fn config_broadcasts_and_validates() {
        let cfg: DistributionConfig = toml::from_str(
            r#"
            name = "rast2"
            base = "rastrigin"
            dim = 2
            translation_range = [[-1.0, 1.0]]
            scaling_range = [0.5, 1.5]
            master_seed = 3
            "#,
        )
        .unwrap();
        let d = TaskDistribution::from_config(&cfg).unwrap();
        assert_eq!(d.space.lower(), &[-5.0, -5.0]);
        assert_eq!(d.translation_range.len(), 2);
        let bad = DistributionConfig {
            scaling_range: [-1.0, 1.0],
            ..cfg
        };
        assert!(TaskDistribution::from_config(&bad).is_err());
    }

    #[test]
    fn task_ref_round_trip() {
        let r: TaskRef = "rast:12".parse().unwrap();
        assert_eq!(r, TaskRef::new("rast", 12));
        assert_eq!(r.to_string(), "rast:12");
        assert!("nocolon".parse::<TaskRef>().is_err());
    }

    #[test]
    fn optimum_proxy_is_running_max() {
        assert_eq!(optimum_proxy([&[0.2, 0.9, 0.5][..]]).unwrap(), 0.9);
        assert_eq!(optimum_proxy([&[0.1][..], &[0.3][..]]).unwrap(), 0.3);
        assert!(matches!(
            optimum_proxy(std::iter::empty::<&[f64]>()),
            Err(Error::MissingData(_))
        ));
        let mut t = TaskInstance::identity(BaseFunction::Sphere, 1).unwrap();
        t.record(-3.0);
        t.record(-5.0);
        assert_eq!(t.optimum_proxy, Some(-3.0));
    }

    proptest! {
        #[test]
        fn proxy_monotone_under_union(a in prop::collection::vec(-1e3f64..1e3, 1..20),
                                      b in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let before = optimum_proxy([&a[..]]).unwrap();
            let after = optimum_proxy([&a[..], &b[..]]).unwrap();
            prop_assert!(after >= before);
            prop_assert!(a.iter().chain(&b).all(|&y| y <= after));
        }
    }
}
