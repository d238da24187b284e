//! Running a trained model as an optimizer with hindsight regret relabelling
//! and the alternative regret-to-go update rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::behaviors::AlgoId;
use crate::dataset::{denormalize_x, AugStep, AugmentedTrajectory, NormalizationStats, Trajectory};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, GaussianPrediction, Model, Variant};
use crate::problems::TaskInstance;
use crate::seed::{rng_from, Rng};

/// Normalized optimum value used at inference.
pub const Y_STAR_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RtgStrategy {
    /// Append 0 and add each new regret to every earlier token.
    Hrr,
    /// Start at `R0` and subtract each new regret; never relabel.
    Naive(f64),
    /// Relabel like HRR but append the constant instead of 0.
    Constant(f64),
}

impl RtgStrategy {
    /// Regret-to-go placed on the padding step of a fresh history.
    pub fn initial(self) -> f64 {
        match self {
            RtgStrategy::Hrr => 0.0,
            RtgStrategy::Naive(r0) => r0,
            RtgStrategy::Constant(c) => c,
        }
    }
}

impl fmt::Display for RtgStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RtgStrategy::Hrr => f.write_str("hrr"),
            RtgStrategy::Naive(r) => write!(f, "naive:{r}"),
            RtgStrategy::Constant(c) => write!(f, "const:{c}"),
        }
    }
}

impl FromStr for RtgStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::invalid(format!("bad number in strategy `{s}`")))
        };
        match s.split_once(':') {
            None if s == "hrr" => Ok(RtgStrategy::Hrr),
            Some(("naive", v)) => Ok(RtgStrategy::Naive(num(v)?)),
            Some(("const", v)) => Ok(RtgStrategy::Constant(num(v)?)),
            _ => Err(Error::invalid(format!(
                "unknown strategy `{s}` (expected hrr, naive:R0 or const:c)"
            ))),
        }
    }
}

impl Serialize for RtgStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RtgStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Stochastic,
    Mean,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(SamplingMode::Stochastic),
            "mean" => Ok(SamplingMode::Mean),
            _ => Err(Error::invalid(format!("unknown sampling mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub budget: usize,
    /// Longest token context fed to the model, padding step included.
    pub context_limit: usize,
    pub strategy: RtgStrategy,
    pub sampling: SamplingMode,
    pub seed: u64,
    /// Start token for the algo-id variant.
    #[serde(default)]
    pub algo: Option<AlgoId>,
}

impl InferenceConfig {
    pub fn new(budget: usize, context_limit: usize, strategy: RtgStrategy, seed: u64) -> Self {
        InferenceConfig {
            budget,
            context_limit,
            strategy,
            sampling: SamplingMode::Stochastic,
            seed,
            algo: None,
        }
    }
}

/// A history holding only the padding step.
pub fn initial_history(dim: usize, strategy: RtgStrategy) -> AugmentedTrajectory {
    AugmentedTrajectory {
        steps: vec![AugStep::padding(dim, strategy.initial())],
    }
}

/// Appends `(x, y)` with regret-to-go `appended` after adding `y_star - y` to every existing token.
fn relabel_and_push(history: &mut AugmentedTrajectory, x: Vec<f64>, y: f64, y_star: f64, appended: f64) {
    let r = y_star - y;
    for s in &mut history.steps {
        s.rtg += r;
    }
    history.steps.push(AugStep {
        x,
        y,
        rtg: appended,
        pad: false,
    });
}

/// Hindsight regret relabelling: every earlier regret-to-go grows by `y_star - y`, the new step gets 0.
pub fn hrr_relabel(history: &mut AugmentedTrajectory, x: Vec<f64>, y: f64, y_star: f64) {
    relabel_and_push(history, x, y, y_star, 0.0);
}

/// Relabels like HRR but appends `c`.
pub fn constant_relabel(history: &mut AugmentedTrajectory, x: Vec<f64>, y: f64, y_star: f64, c: f64) {
    relabel_and_push(history, x, y, y_star, c);
}

/// Decrements the running regret-to-go by `y_star - y` and appends it; earlier tokens are untouched.
pub fn naive_relabel(
    history: &mut AugmentedTrajectory,
    x: Vec<f64>,
    y: f64,
    y_star: f64,
    running: f64,
) -> f64 {
    let next = running - (y_star - y);
    history.steps.push(AugStep {
        x,
        y,
        rtg: next,
        pad: false,
    });
    next
}

/// Applies `strategy` for one new observation. `running` carries the naive running value.
pub fn apply_strategy(
    strategy: RtgStrategy,
    history: &mut AugmentedTrajectory,
    x: Vec<f64>,
    y: f64,
    y_star: f64,
    running: &mut f64,
) {
    match strategy {
        RtgStrategy::Hrr => hrr_relabel(history, x, y, y_star),
        RtgStrategy::Constant(c) => constant_relabel(history, x, y, y_star, c),
        RtgStrategy::Naive(_) => *running = naive_relabel(history, x, y, y_star, *running),
    }
}

/// The model's view of a history: everything if it fits, otherwise the padding
/// step followed by the most recent `limit - 1` steps.
pub fn context_window(history: &AugmentedTrajectory, limit: usize) -> Vec<AugStep> {
    let n = history.steps.len();
    if n <= limit {
        return history.steps.clone();
    }
    let mut out = Vec::with_capacity(limit);
    out.push(history.steps[0].clone());
    out.extend_from_slice(&history.steps[n - (limit - 1)..]);
    out
}

/// Prediction for the next query and the point drawn from it (clamped to the unit cube).
pub fn propose(
    model: &Model,
    history: &AugmentedTrajectory,
    context_limit: usize,
    algo: Option<usize>,
    mode: SamplingMode,
    rng: &mut Rng,
) -> Result<(GaussianPrediction, Vec<f64>)> {
    let ctx = context_window(history, context_limit);
    let pred = model.forward(&ctx, algo)?.pop().unwrap();
    let mut x = match mode {
        SamplingMode::Mean => pred.mean.clone(),
        SamplingMode::Stochastic => pred.sample(rng),
    };
    for v in &mut x {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((pred, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub y_norm: f64,
    /// Regret-to-go attached to the new step.
    pub rtg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Unit-cube points and raw values.
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Final augmented history in normalized value space.
    pub history: AugmentedTrajectory,
}

/// Runs the checkpointed model on `task` for `cfg.budget` evaluations.
pub fn run_optimization(ckpt: &Checkpoint, task: &TaskInstance, cfg: &InferenceConfig) -> Result<RunOutput> {
    let norm = ckpt
        .normalization
        .as_ref()
        .ok_or_else(|| Error::config("checkpoint has no normalization statistics"))?;
    run_with_model(&ckpt.model, norm, task, cfg, &ckpt.meta.label)
}

pub fn run_with_model(
    model: &Model,
    norm: &NormalizationStats,
    task: &TaskInstance,
    cfg: &InferenceConfig,
    label: &str,
) -> Result<RunOutput> {
    let mcfg = model.config();
    if cfg.budget == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    if cfg.context_limit < 2 || cfg.context_limit > mcfg.max_len {
        return Err(Error::config(format!(
            "context limit {} outside 2..={}",
            cfg.context_limit, mcfg.max_len
        )));
    }
    if task.dim() != mcfg.x_dim {
        return Err(Error::config(format!(
            "task dimension {} does not match model dimension {}",
            task.dim(),
            mcfg.x_dim
        )));
    }
    let algo = match (mcfg.variant, cfg.algo) {
        (Variant::AlgoId, Some(a)) => Some(a.index()),
        (Variant::AlgoId, None) => return Err(Error::config("algo-id model needs an algorithm")),
        _ => None,
    };
    let mut rng = rng_from(&[cfg.seed, 0x1f3]);
    let mut history = initial_history(mcfg.x_dim, cfg.strategy);
    let mut running = cfg.strategy.initial();
    let mut xs = Vec::with_capacity(cfg.budget);
    let mut ys = Vec::with_capacity(cfg.budget);
    let mut diagnostics = Vec::with_capacity(cfg.budget);
    for t in 0..cfg.budget {
        let (pred, x) = propose(model, &history, cfg.context_limit, algo, cfg.sampling, &mut rng)?;
        let y = task.evaluate(&denormalize_x(&x, &task.space))?;
        let y_norm = norm.normalize(y);
        apply_strategy(cfg.strategy, &mut history, x.clone(), y_norm, Y_STAR_NORM, &mut running);
        diagnostics.push(StepDiagnostics {
            step: t + 1,
            mean: pred.mean,
            std: pred.std,
            y_norm,
            rtg: history.steps.last().unwrap().rtg,
        });
        xs.push(x);
        ys.push(y);
    }
    let label = if label.is_empty() { mcfg.variant.name() } else { label };
    let trajectory = Trajectory::new(task.task.clone(), label, cfg.seed, xs, ys)?;
    Ok(RunOutput {
        trajectory,
        diagnostics,
        history,
    })
}
