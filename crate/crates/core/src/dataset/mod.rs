//! Trajectories, regret-to-go augmentation, value normalization and windowing.

mod format;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::behaviors::AlgoId;
use crate::error::{Error, Result};
use crate::problems::{SearchSpace, TaskRef};
use crate::seed::Rng;

pub use format::{
    read_dataset, read_records, write_dataset, write_records, Dataset, FileEntry, Manifest,
    FORMAT_VERSION,
};

/// Placeholder coordinate of the padding step (box center in unit coordinates).
pub const PAD_X: f64 = 0.5;
pub const PAD_Y: f64 = 0.0;

/// One optimization history. `xs` are in unit-cube coordinates, `ys` are raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: TaskRef,
    /// Behavior algorithm name or model label that produced the run.
    pub algo: String,
    pub seed: u64,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        task: TaskRef,
        algo: impl Into<String>,
        seed: u64,
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
    ) -> Result<Self> {
        let t = Trajectory {
            task,
            algo: algo.into(),
            seed,
            xs,
            ys,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ys.is_empty() || self.xs.len() != self.ys.len() {
            return Err(Error::invalid(format!(
                "trajectory needs matching non-empty x/y lists (got {} and {})",
                self.xs.len(),
                self.ys.len()
            )));
        }
        let d = self.xs[0].len();
        if d == 0 || self.xs.iter().any(|x| x.len() != d) {
            return Err(Error::invalid("trajectory points have inconsistent dimension"));
        }
        if self
            .xs
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid("trajectory coordinates must lie in [0, 1]"));
        }
        if self.ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("trajectory values must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    pub fn algo_id(&self) -> Option<AlgoId> {
        self.algo.parse().ok()
    }

    pub fn best(&self) -> f64 {
        self.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        self.ys
            .iter()
            .scan(f64::NEG_INFINITY, |b, &y| {
                *b = b.max(y);
                Some(*b)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugStep {
    pub x: Vec<f64>,
    pub y: f64,
    pub rtg: f64,
    pub pad: bool,
}

impl AugStep {
    pub fn padding(dim: usize, rtg: f64) -> Self {
        AugStep {
            x: vec![PAD_X; dim],
            y: PAD_Y,
            rtg,
            pad: true,
        }
    }
}

/// `T + 1` steps; index 0 is the padding step and `rtg[T] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTrajectory {
    pub steps: Vec<AugStep>,
}

impl AugmentedTrajectory {
    pub fn rtgs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rtg).collect()
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Regret-to-go `R_t = sum_{t' > t} (y* - y_{t'})` for `t = 0..=T`, accumulated from the end.
pub fn regret_to_go(ys: &[f64], y_star: f64) -> Vec<f64> {
    let mut rtg = vec![0.0; ys.len() + 1];
    for t in (0..ys.len()).rev() {
        rtg[t] = rtg[t + 1] + (y_star - ys[t]);
    }
    rtg
}

fn augment_values(xs: &[Vec<f64>], ys: &[f64], y_star: f64) -> AugmentedTrajectory {
    let rtg = regret_to_go(ys, y_star);
    let dim = xs[0].len();
    let mut steps = Vec::with_capacity(ys.len() + 1);
    steps.push(AugStep::padding(dim, rtg[0]));
    for (t, (x, &y)) in xs.iter().zip(ys).enumerate() {
        steps.push(AugStep {
            x: x.clone(),
            y,
            rtg: rtg[t + 1],
            pad: false,
        });
    }
    AugmentedTrajectory { steps }
}

pub fn augment_rtg(traj: &Trajectory, y_star: f64) -> AugmentedTrajectory {
    augment_values(&traj.xs, &traj.ys, y_star)
}

/// Augments with values already mapped through [`ScaledValues`].
pub fn augment_scaled(traj: &Trajectory, scaled: &ScaledValues) -> AugmentedTrajectory {
    augment_values(&traj.xs, &scaled.ys, scaled.y_star)
}

pub fn normalize_x(x_raw: &[f64], space: &SearchSpace) -> Result<Vec<f64>> {
    if !space.contains(x_raw) {
        return Err(Error::invalid("point lies outside the search space"));
    }
    Ok(x_raw
        .iter()
        .zip(space.lower().iter().zip(space.upper()))
        .map(|(x, (l, u))| ((x - l) / (u - l)).clamp(0.0, 1.0))
        .collect())
}

pub fn denormalize_x(x_unit: &[f64], space: &SearchSpace) -> Vec<f64> {
    x_unit
        .iter()
        .zip(space.lower().iter().zip(space.upper()))
        .map(|(v, (l, u))| (l + v * (u - l)).clamp(*l, *u))
        .collect()
}

/// How function values are mapped before being fed to the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Random lower/upper bounds around the task's observed range.
    #[default]
    Random,
    /// Plain min-max scaling with the task's observed range.
    Dataset,
    /// Raw values.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledValues {
    pub ys: Vec<f64>,
    pub y_star: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Draws `(l, u)` with `l ~ U(y_min - s/2, y_min + s/2)`, `u ~ U(y_max - s/2, y_max + s/2)`,
/// redrawing until `u - l >= s/4`.
pub fn draw_bounds(y_min: f64, y_max: f64, rng: &mut Rng) -> Result<(f64, f64)> {
    let s = y_max - y_min;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateRange {
            min: y_min,
            max: y_max,
        });
    }
    loop {
        let l = y_min + s * (rng.random::<f64>() - 0.5);
        let u = y_max + s * (rng.random::<f64>() - 0.5);
        if u - l >= s / 4.0 {
            return Ok((l, u));
        }
    }
}

/// Maps values and the optimum proxy with fixed bounds: `(y - l) / (u - l)`.
pub fn scale_with(ys: &[f64], y_star: f64, lower: f64, upper: f64) -> ScaledValues {
    let w = upper - lower;
    ScaledValues {
        ys: ys.iter().map(|y| (y - lower) / w).collect(),
        y_star: (y_star - lower) / w,
        lower,
        upper,
    }
}

/// Random value scaling of a trajectory. The task's best value `y_max` acts as `y*`.
pub fn random_scale_y(
    traj: &Trajectory,
    y_min: f64,
    y_max: f64,
    rng: &mut Rng,
) -> Result<ScaledValues> {
    let (l, u) = draw_bounds(y_min, y_max, rng)?;
    Ok(scale_with(&traj.ys, y_max, l, u))
}

/// Scales a trajectory according to `method`.
pub fn scale_values(
    method: NormMethod,
    traj: &Trajectory,
    y_min: f64,
    y_max: f64,
    rng: &mut Rng,
) -> Result<ScaledValues> {
    match method {
        NormMethod::Random => random_scale_y(traj, y_min, y_max, rng),
        NormMethod::Dataset => {
            if !(y_max > y_min) {
                return Err(Error::DegenerateRange {
                    min: y_min,
                    max: y_max,
                });
            }
            Ok(scale_with(&traj.ys, y_max, y_min, y_max))
        }
        NormMethod::None => Ok(scale_with(&traj.ys, y_max, 0.0, 1.0)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub steps: Vec<AugStep>,
}

/// Uniformly placed window of `tau` consecutive augmented steps.
pub fn sample_subsequence(aug: &AugmentedTrajectory, tau: usize, rng: &mut Rng) -> Result<Window> {
    let len = aug.steps.len();
    if tau == 0 || tau > len {
        return Err(Error::invalid(format!(
            "window length {tau} outside 1..={len}"
        )));
    }
    let start = rng.random_range(0..=len - tau);
    Ok(Window {
        start,
        steps: aug.steps[start..start + tau].to_vec(),
    })
}

/// Observed value range of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: TaskRef,
    pub y_min: f64,
    pub y_max: f64,
    pub optimum_proxy: f64,
    pub trajectories: usize,
}

/// Per-task ranges from a set of trajectories, keyed by task.
pub fn task_stats(trajs: &[Trajectory]) -> BTreeMap<TaskRef, TaskStats> {
    let mut out: BTreeMap<TaskRef, TaskStats> = BTreeMap::new();
    for t in trajs {
        let lo = t.ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.best();
        out.entry(t.task.clone())
            .and_modify(|s| {
                s.y_min = s.y_min.min(lo);
                s.y_max = s.y_max.max(hi);
                s.optimum_proxy = s.y_max;
                s.trajectories += 1;
            })
            .or_insert(TaskStats {
                task: t.task.clone(),
                y_min: lo,
                y_max: hi,
                optimum_proxy: hi,
                trajectories: 1,
            });
    }
    out
}

/// Inference-time value normalization: averages of the per-task worst and best values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub lower: f64,
    pub upper: f64,
    pub tasks: Vec<TaskStats>,
}

impl NormalizationStats {
    pub fn from_tasks(tasks: Vec<TaskStats>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::MissingData("no task statistics".into()));
        }
        let n = tasks.len() as f64;
        let lower = tasks.iter().map(|s| s.y_min).sum::<f64>() / n;
        let upper = tasks.iter().map(|s| s.y_max).sum::<f64>() / n;
        if !(upper > lower) {
            return Err(Error::DegenerateRange {
                min: lower,
                max: upper,
            });
        }
        Ok(NormalizationStats {
            lower,
            upper,
            tasks,
        })
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.lower) / (self.upper - self.lower)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    fn traj(ys: Vec<f64>) -> Trajectory {
        let xs = ys.iter().map(|_| vec![0.25, 0.75]).collect();
        Trajectory::new(TaskRef::new("t", 0), "random_search", 0, xs, ys).unwrap()
    }

    /// Independent O(T^2) definition of the regret-to-go.
    fn rtg_oracle(ys: &[f64], y_star: f64) -> Vec<f64> {
        (0..=ys.len())
            .map(|t| {
                let mut s = 0.0;
                for y in &ys[t..] {
                    s += y_star - y;
                }
                s
            })
            .collect()
    }

    #[test]
    fn hand_computed_rtg() {
        let aug = augment_rtg(&traj(vec![0.2, 0.5, 0.9]), 1.0);
        let expected = [1.4, 0.6, 0.1, 0.0];
        for (a, e) in aug.rtgs().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(aug.steps[0].pad);
        assert_eq!(aug.steps[0].x, vec![PAD_X; 2]);
        assert_eq!(aug.steps[0].y, PAD_Y);
        assert_eq!(aug.steps[3].y, 0.9);
    }

    #[test]
    fn optimal_trajectory_has_zero_rtg() {
        let aug = augment_rtg(&traj(vec![2.0; 5]), 2.0);
        assert!(aug.rtgs().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn rtg_matches_double_loop_oracle() {
        let mut rng = rng_from(&[1]);
        for _ in 0..200 {
            let t = rng.random_range(1..=200);
            let ys: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..1.0)).collect();
            let got = regret_to_go(&ys, 1.0);
            for (a, b) in got.iter().zip(rtg_oracle(&ys, 1.0)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn normalize_x_cases() {
        let space = SearchSpace::cube(3, -5.0, 5.0).unwrap();
        assert_eq!(normalize_x(&[0.0; 3], &space).unwrap(), vec![0.5; 3]);
        assert_eq!(normalize_x(&[-5.0; 3], &space).unwrap(), vec![0.0; 3]);
        assert!(normalize_x(&[6.0, 0.0, 0.0], &space).is_err());
        let mut rng = rng_from(&[2]);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let back = denormalize_x(&normalize_x(&x, &space).unwrap(), &space);
            for (a, b) in x.iter().zip(back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_direct_formula() {
        let s = scale_with(&[4.0], 10.0, -2.0, 9.0);
        assert!((s.ys[0] - 6.0 / 11.0).abs() < 1e-15);
        let t = traj(vec![0.0, 3.0, 10.0]);
        let s = scale_with(&t.ys, 10.0, 0.0, 10.0);
        assert_eq!(s.ys, vec![0.0, 0.3, 1.0]);
    }

    #[test]
    fn degenerate_range_is_signalled() {
        let mut rng = rng_from(&[0]);
        let t = traj(vec![1.0, 1.0]);
        assert!(matches!(
            random_scale_y(&t, 1.0, 1.0, &mut rng),
            Err(Error::DegenerateRange { .. })
        ));
    }

    #[test]
    fn drawn_bounds_respect_guard_and_ranges() {
        let mut rng = rng_from(&[3]);
        for _ in 0..10_000 {
            let (l, u) = draw_bounds(2.0, 6.0, &mut rng).unwrap();
            assert!((0.0..=4.0).contains(&l));
            assert!((4.0..=8.0).contains(&u));
            assert!(u - l >= 1.0);
        }
    }

    #[test]
    fn full_window_starts_at_zero() {
        let aug = augment_rtg(&traj(vec![0.1, 0.2, 0.3]), 1.0);
        let mut rng = rng_from(&[0]);
        let w = sample_subsequence(&aug, 4, &mut rng).unwrap();
        assert_eq!(w.start, 0);
        assert_eq!(w.steps, aug.steps);
        assert!(sample_subsequence(&aug, 5, &mut rng).is_err());
        assert!(sample_subsequence(&aug, 0, &mut rng).is_err());
    }

    #[test]
    fn unit_windows_are_uniform() {
        let ys: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        let aug = augment_rtg(&traj(ys), 1.0);
        let mut rng = rng_from(&[4]);
        let n = 100_000;
        let k = aug.steps.len();
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let w = sample_subsequence(&aug, 1, &mut rng).unwrap();
            assert_eq!(w.steps[0].rtg, aug.steps[w.start].rtg);
            counts[w.start] += 1;
        }
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn window_keeps_full_horizon_rtg() {
        let aug = augment_rtg(&traj(vec![0.1, 0.4, 0.3, 0.8, 0.2]), 1.0);
        let mut rng = rng_from(&[5]);
        for _ in 0..50 {
            let w = sample_subsequence(&aug, 3, &mut rng).unwrap();
            for (k, s) in w.steps.iter().enumerate() {
                assert_eq!(s, &aug.steps[w.start + k]);
            }
        }
    }

    #[test]
    fn normalization_stats_average_ranges() {
        let tasks = vec![
            TaskStats {
                task: TaskRef::new("a", 0),
                y_min: -4.0,
                y_max: 0.0,
                optimum_proxy: 0.0,
                trajectories: 1,
            },
            TaskStats {
                task: TaskRef::new("a", 1),
                y_min: -2.0,
                y_max: 2.0,
                optimum_proxy: 2.0,
                trajectories: 1,
            },
        ];
        let n = NormalizationStats::from_tasks(tasks).unwrap();
        assert_eq!((n.lower, n.upper), (-3.0, 1.0));
        assert_eq!(n.normalize(1.0), 1.0);
    }

    proptest! {
        #[test]
        fn telescoping_and_monotone(ys in prop::collection::vec(-10.0f64..10.0, 1..60)) {
            let y_star = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let r = augment_rtg(&traj(ys.clone()), y_star).rtgs();
            prop_assert_eq!(r[ys.len()], 0.0);
            for t in 1..=ys.len() {
                let lhs = r[t - 1] - r[t];
                prop_assert!((lhs - (y_star - ys[t - 1])).abs() <= 1e-12 * r[t - 1].abs().max(1.0));
                prop_assert!(r[t - 1] >= r[t]);
            }
        }

        #[test]
        fn scale_equivariance_and_argmax(ys in prop::collection::vec(-10.0f64..10.0, 2..40), seed in 0u64..1000) {
            let t = traj(ys.clone());
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.best();
            prop_assume!(hi > lo);
            let mut rng = rng_from(&[seed]);
            let s = random_scale_y(&t, lo, hi, &mut rng).unwrap();
            let raw = augment_rtg(&t, hi).rtgs();
            let scaled = augment_scaled(&t, &s).rtgs();
            let w = s.upper - s.lower;
            for (a, b) in scaled.iter().zip(&raw) {
                prop_assert!((a - b / w).abs() <= 1e-10 * (b / w).abs().max(1.0));
            }
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            prop_assert_eq!(argmax(&ys), argmax(&s.ys));
        }
    }
}
